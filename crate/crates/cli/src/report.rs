//! Markdown summary of a finished run.

use std::fmt::Write as _;

use anyhow::{bail, Result};

use crate::config::ExperimentKind;
use crate::manifest::{OutputKind, RunManifest};

#[derive(Clone, Debug)]
pub struct Report {
    pub text: String,
    pub passed: bool,
}

/// Reference decay of the quenched return probability in dimension `d`.
pub fn reference_decay(d: usize) -> (f64, &'static str) {
    match d {
        2 | 3 => (d as f64 / 2.0, "n^{-d/2}"),
        4 => (2.0, "n^{-2} log n"),
        _ => (2.0, "n^{-2}"),
    }
}

fn ci(half: Option<f64>) -> String {
    half.map_or_else(|| "n/a".into(), |h| format!("± {h:.4}"))
}

/// Renders the manifest. Fails on an empty manifest or when an output file
/// is missing or no longer matches its checksum.
pub fn emit_report(manifest: &RunManifest) -> Result<Report> {
    if manifest.tasks.is_empty() || manifest.outputs.is_empty() {
        bail!("empty manifest: no tasks or outputs recorded");
    }
    let stale = manifest.stale_outputs();
    if !stale.is_empty() {
        let names: Vec<String> = stale.iter().map(|p| p.display().to_string()).collect();
        bail!("missing or modified outputs in {}: {}", manifest.output_dir.display(), names.join(", "));
    }
    let c = &manifest.config;
    let mut s = String::new();
    writeln!(s, "# {} run", c.kind.as_str())?;
    writeln!(s)?;
    writeln!(s, "- law: `{}`", c.law.id())?;
    writeln!(s, "- d = {}, L = {}, ensemble = {}, seed = {}", c.d, c.radius, c.ensemble, c.seed)?;
    writeln!(s, "- config hash: `{}`", manifest.config_hash)?;
    writeln!(s, "- version {}, {} to {}", manifest.version, manifest.started, manifest.finished)?;
    if let Some(t) = &manifest.truncation {
        writeln!(
            s,
            "- **truncated**: n_max {} reduced to {} by the {}-byte memory cap",
            t.requested_n_max, t.reached_n_max, t.cap
        )?;
    }
    writeln!(s)?;

    if !manifest.fits.is_empty() {
        writeln!(s, "## Fits")?;
        writeln!(s)?;
        let exponent_kind = matches!(c.kind, ExperimentKind::DecayFit | ExperimentKind::Annealed);
        if exponent_kind {
            let (a, shape) = reference_decay(c.d);
            writeln!(s, "| quantity | estimate | 95% CI | reference |")?;
            writeln!(s, "|---|---|---|---|")?;
            for f in &manifest.fits {
                writeln!(s, "| {} | {:.4} | {} | {a} ({shape}) |", f.label, f.estimate, ci(f.ci95))?;
            }
        } else {
            writeln!(s, "| quantity | estimate | 95% CI |")?;
            writeln!(s, "|---|---|---|")?;
            for f in &manifest.fits {
                writeln!(s, "| {} | {:.4} | {} |", f.label, f.estimate, ci(f.ci95))?;
            }
        }
        writeln!(s)?;
    }

    writeln!(s, "## Invariants")?;
    writeln!(s)?;
    if manifest.invariants.is_empty() {
        writeln!(s, "none checked")?;
    }
    for i in &manifest.invariants {
        writeln!(s, "- {} {}: {}", if i.passed { "PASS" } else { "FAIL" }, i.name, i.detail)?;
    }
    writeln!(s)?;

    writeln!(s, "## Plot data")?;
    writeln!(s)?;
    for o in manifest.outputs.iter().filter(|o| o.kind == OutputKind::Plot) {
        writeln!(s, "- {}", manifest.output_dir.join(&o.path).display())?;
    }
    let passed = manifest.passed();
    writeln!(s)?;
    writeln!(s, "**{}**", if passed { "PASS" } else { "FAIL" })?;
    Ok(Report { text: s, passed })
}
