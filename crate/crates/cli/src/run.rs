//! Experiment pipelines.
//!
//! Each kind splits into independent tasks (one per field, or one per grid
//! value) that run on a rayon pool. Results are collected in task order, so
//! the thread count never changes an output byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use rcm_core::cluster::{components, select_alpha};
use rcm_core::coarse::{hat_chains, hiding_time_census, symmetry_and_row_residuals, write_rows_csv};
use rcm_core::env::{bond_threshold, sample_field, ConductanceField, ConductanceLaw, Environment};
use rcm_core::iso::{check_isoperimetry, write_gn_csv, write_iso_csv, gn_probability, IsoParams};
use rcm_core::kernel::{
    annealed_return, fit_decay, mc_return, return_series, DecayFit, KernelSeries, Method, SeriesMeta, SeriesPoint,
};
use rcm_core::lattice::Lattice;
use rcm_core::rng::{derive_seed, walker_rng};
use rcm_core::stats::{least_squares, linear_fit, mean_stderr};
use rcm_core::traps::{detect_traps, trap_lower_bound, trap_sum, write_bounds_csv, write_traps_csv, BoundRow};
use rcm_core::RcmError;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::manifest::{FitSummary, InvariantResult, OutputKind, OutputRecord, RunManifest, TaskRecord, Truncation};

pub const OUTPUT_ROOT_VAR: &str = "RCM_OUTPUT_ROOT";

/// Conditioning gives up after this many rejected fields per task.
const MAX_REJECTIONS: u64 = 1000;

/// Output directory: the configured one, else `$RCM_OUTPUT_ROOT/<kind>-<hash>`
/// (root `rcm-out` when unset).
pub fn resolve_output(config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = &config.output {
        return dir.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("rcm-out"), PathBuf::from);
    root.join(format!("{}-{}", config.kind.as_str(), &config.hash()[..12]))
}

struct Outputs {
    dir: PathBuf,
    records: Vec<OutputRecord>,
}

impl Outputs {
    fn write(&mut self, name: String, kind: OutputKind, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(&name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        use sha2::{Digest, Sha256};
        self.records.push(OutputRecord {
            path: PathBuf::from(name),
            kind,
            sha256: format!("{:x}", Sha256::digest(bytes)),
        });
        Ok(())
    }

    fn with<F>(&mut self, name: String, kind: OutputKind, fill: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, kind, &buf)
    }

    fn json<T: serde::Serialize>(&mut self, name: String, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, OutputKind::Fit, text.as_bytes())
    }
}

#[derive(Default)]
struct Outcome {
    tasks: Vec<TaskRecord>,
    invariants: Vec<InvariantResult>,
    fits: Vec<FitSummary>,
    truncation: Option<Truncation>,
}

impl Outcome {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.invariants.push(InvariantResult { name: name.into(), passed, detail });
    }
}

/// Runs the configured experiment, writes its outputs and `manifest.json`
/// into the output directory, and returns the manifest.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let started = chrono::Utc::now().to_rfc3339();
    let dir = resolve_output(config);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let threads = config.threads.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let mut out = Outputs { dir: dir.clone(), records: Vec::new() };
    let outcome = pool.install(|| match config.kind {
        ExperimentKind::DecayFit => decay_fit(config, threads, &mut out),
        ExperimentKind::CoarseCheck => coarse_check(config, &mut out),
        ExperimentKind::IsoProfile => iso_profile(config, &mut out),
        ExperimentKind::GnScan => gn_scan(config, &mut out),
        ExperimentKind::TrapCensus => trap_census(config, &mut out),
        ExperimentKind::TrapBound => trap_bound(config, threads, &mut out),
        ExperimentKind::Annealed => annealed(config, threads, &mut out),
    })?;
    let manifest = RunManifest {
        config: config.clone(),
        config_hash: config.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        output_dir: dir,
        tasks: outcome.tasks,
        outputs: out.records,
        invariants: outcome.invariants,
        fits: outcome.fits,
        truncation: outcome.truncation,
    };
    manifest.save()?;
    Ok(manifest)
}

fn field_bytes(d: usize, radius: u32) -> Result<usize> {
    Ok(Lattice::new(d, radius)?.slot_count())
}

/// Three `f64` buffers over the `ℓ∞` ball of radius `n`.
fn kernel_bytes(d: usize, n: usize) -> usize {
    (2 * n + 1).saturating_pow(d as u32).saturating_mul(24)
}

/// Grid points whose kernel fits the per-task share of the memory cap.
fn capped_grid(config: &ExperimentConfig, concurrent: usize, outcome: &mut Outcome) -> Result<Vec<usize>> {
    let share = config.memory_cap / concurrent.max(1);
    let field = field_bytes(config.d, config.radius)?;
    if field > share {
        bail!("memory_cap: a stored field needs {field} bytes but each task gets {share}");
    }
    let grid: Vec<usize> = config
        .n_grid
        .iter()
        .copied()
        .filter(|&n| field + kernel_bytes(config.d, n) <= share)
        .collect();
    let Some(&reached) = grid.last() else {
        bail!("memory_cap: no grid time fits in {share} bytes per task");
    };
    if reached < config.n_max() {
        log::warn!("memory cap truncates n_max {} to {reached}", config.n_max());
        outcome.truncation = Some(Truncation {
            requested_n_max: config.n_max(),
            reached_n_max: reached,
            cap: config.memory_cap,
        });
    }
    Ok(grid)
}

/// First field of the task's seed sequence whose origin lies in the largest
/// positive-conductance component.
fn conditioned_field(config: &ExperimentConfig, task_seed: u64) -> Result<(ConductanceField, u64, u64)> {
    for k in 0..MAX_REJECTIONS {
        let seed = derive_seed(task_seed, k);
        let field = sample_field(config.d, config.radius, &config.law, seed)?;
        if components(&field, 0.0).in_largest(field.lattice().origin()) {
            return Ok((field, seed, k));
        }
    }
    bail!("origin missed the largest component in {MAX_REJECTIONS} fields")
}

fn strong_alpha(config: &ExperimentConfig, field: &ConductanceField) -> Result<f64> {
    match config.alpha {
        Some(a) => Ok(a),
        None => select_alpha(&config.law, field, None)?
            .ok_or_else(|| anyhow!("alpha: no supercritical strong threshold for this law and box")),
    }
}

fn task_seeds(config: &ExperimentConfig, count: usize) -> Vec<(usize, u64)> {
    (0..count).map(|i| (i, derive_seed(config.seed, i as u64))).collect()
}

/// Exponent `a` and its standard error in `ln v = c − a ln n (+ b ln ln n)`.
///
/// The slope variance is `σ² / RSS_n`, with `RSS_n` the residual of `ln n`
/// regressed on the other columns.
pub fn exponent_with_stderr(ns: &[usize], values: &[f64], with_log: bool) -> Result<(f64, f64)> {
    let ln_n: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mut others = vec![vec![1.0; ns.len()]];
    if with_log {
        others.push(ln_n.iter().map(|l| l.ln()).collect());
    }
    let mut cols = vec![others[0].clone(), ln_n.clone()];
    cols.extend(others.iter().skip(1).cloned());
    let (beta, resid) = least_squares(&cols, &y)?;
    let dof = ns.len().saturating_sub(cols.len());
    if dof == 0 {
        return Ok((-beta[1], f64::NAN));
    }
    let sigma2 = resid * resid / dof as f64;
    let (_, rss_n) = least_squares(&others, &ln_n)?;
    Ok((-beta[1], (sigma2).sqrt() / rss_n))
}

/// Mean and 95% half-width across tasks; a single task falls back to its
/// own regression error.
fn summarise(label: &str, values: Vec<f64>, single_se: f64) -> FitSummary {
    let est = mean_stderr(&values);
    let se = if values.len() > 1 { est.stderr } else { single_se };
    let ci95 = se.is_finite().then_some(1.96 * se);
    FitSummary { label: label.into(), estimate: est.mean, ci95, values }
}

struct DecayTask {
    id: usize,
    record: TaskRecord,
    series: Option<KernelSeries>,
    failure: Option<String>,
    fit: Option<(DecayFit, f64)>,
    mc: Vec<(usize, f64, f64, f64)>,
}

fn decay_fit(config: &ExperimentConfig, threads: usize, out: &mut Outputs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let grid = capped_grid(config, threads.min(config.ensemble), &mut outcome)?;
    let n_max = *grid.last().expect("non-empty grid");
    let window = (config.fit_window().0, config.fit_window().1.min(n_max));
    let with_log = config.log_correction();
    let origin = vec![0; config.d];
    let tasks: Vec<DecayTask> = task_seeds(config, config.ensemble)
        .into_par_iter()
        .map(|(id, seed)| -> Result<DecayTask> {
            let (field, field_seed, rejections) = conditioned_field(config, seed)?;
            let record = TaskRecord { id, seed, field_seed: Some(field_seed), rejections };
            let series = match return_series(&field, &origin, n_max, 1) {
                Ok(s) => s,
                Err(RcmError::Monotonicity { n, prev, value }) => {
                    return Ok(DecayTask {
                        id,
                        record,
                        series: None,
                        failure: Some(format!("task {id}: increase at n = {n}: {prev:e} -> {value:e}")),
                        fit: None,
                        mc: Vec::new(),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let mut series = series;
            series.points.retain(|p| grid.contains(&p.n));
            let fit = fit_decay(&series, window, with_log).ok().map(|f| {
                let (ns, vs): (Vec<usize>, Vec<f64>) = series
                    .points
                    .iter()
                    .filter(|p| p.n >= window.0 && p.n <= window.1)
                    .map(|p| (p.n, p.value))
                    .unzip();
                let se = exponent_with_stderr(&ns, &vs, with_log).map_or(f64::NAN, |(_, se)| se);
                (f, se)
            });
            let mut mc = Vec::new();
            if config.walkers > 0 {
                for p in &series.points {
                    let (est, se) = mc_return(&field, &origin, p.n, config.walkers, derive_seed(seed, (1 << 32) + p.n as u64))?;
                    mc.push((p.n, est, se, p.value));
                }
            }
            Ok(DecayTask { id, record, series: Some(series), failure: None, fit, mc })
        })
        .collect::<Result<_>>()?;

    let mut fits_csv = csv::Writer::from_writer(Vec::new());
    fits_csv.write_record(["task", "field_seed", "exponent", "stderr", "log_coefficient", "prefactor", "residual"])?;
    let mut exponents = Vec::new();
    let mut single_se = f64::NAN;
    let mut worst_mass: f64 = 0.0;
    let mut mc_checked = 0usize;
    let mut mc_within = 0usize;
    let mut mc_csv = csv::Writer::from_writer(Vec::new());
    mc_csv.write_record(["task", "n", "mc", "stderr", "exact", "z"])?;
    for t in &tasks {
        outcome.tasks.push(t.record.clone());
        let Some(series) = &t.series else { continue };
        worst_mass = worst_mass.max(series.max_mass_deviation);
        out.with(format!("series_{:03}.csv", t.id), OutputKind::Table, |b| Ok(series.write_csv(b)?))?;
        out.with(format!("series_{:03}.dat", t.id), OutputKind::Plot, |b| Ok(series.write_plot(b)?))?;
        if let Some((fit, se)) = &t.fit {
            out.json(format!("fit_{:03}.json", t.id), fit)?;
            fits_csv.write_record([
                t.id.to_string(),
                t.record.field_seed.unwrap_or(0).to_string(),
                fit.exponent.to_string(),
                se.to_string(),
                fit.log_coefficient.to_string(),
                fit.prefactor.to_string(),
                fit.residual.to_string(),
            ])?;
            exponents.push(fit.exponent);
            single_se = *se;
        }
        for &(n, est, se, exact) in &t.mc {
            let z = if se > 0.0 { (est - exact) / se } else if est == exact { 0.0 } else { f64::INFINITY };
            mc_checked += 1;
            if (est - exact).abs() <= 4.0 * se || est == exact {
                mc_within += 1;
            }
            mc_csv.write_record([t.id.to_string(), n.to_string(), est.to_string(), se.to_string(), exact.to_string(), z.to_string()])?;
        }
    }
    out.write("fits.csv".into(), OutputKind::Table, &fits_csv.into_inner()?)?;

    let failures: Vec<&String> = tasks.iter().filter_map(|t| t.failure.as_ref()).collect();
    outcome.check(
        "even-step return probabilities non-increasing",
        failures.is_empty(),
        if failures.is_empty() { format!("{} series", tasks.len()) } else { failures.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; ") },
    );
    outcome.check("mass conservation", worst_mass <= 1e-12, format!("max deviation {worst_mass:e}"));
    let fitted = exponents.len();
    let ok_series = tasks.len() - failures.len();
    outcome.check(
        "decay fit",
        fitted == ok_series && fitted > 0,
        format!("{fitted}/{} series fitted over n in [{}, {}]", tasks.len(), window.0, window.1),
    );
    if config.walkers > 0 {
        out.write("mc_check.csv".into(), OutputKind::Table, &mc_csv.into_inner()?)?;
        let rate = mc_within as f64 / mc_checked.max(1) as f64;
        outcome.check(
            "Monte Carlo within 4 stderr of exact",
            rate >= 0.99,
            format!("{mc_within}/{mc_checked} ({:.1}%)", 100.0 * rate),
        );
    }
    if fitted > 0 {
        let label = if with_log { "exponent (with ln ln n term)" } else { "exponent" };
        outcome.fits.push(summarise(label, exponents, single_se));
    }
    Ok(outcome)
}

fn coarse_check(config: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    struct Row {
        id: usize,
        record: TaskRecord,
        sym: f64,
        sum: f64,
        violations: usize,
        anchors: usize,
        rows_csv: Vec<u8>,
        census_csv: Vec<u8>,
        plot: Vec<u8>,
        mean_size: f64,
    }
    let rows: Vec<Row> = task_seeds(config, config.ensemble)
        .into_par_iter()
        .map(|(id, seed)| -> Result<Row> {
            let field = sample_field(config.d, config.radius, &config.law, seed)?;
            let alpha = strong_alpha(config, &field)?;
            let strong = components(&field, alpha);
            let lat = field.lattice();
            let sites: Vec<usize> = (0..lat.site_count()).filter(|&s| strong.in_largest(s)).collect();
            if sites.is_empty() {
                bail!("task {id}: empty strong component at alpha = {alpha}");
            }
            let mut rng = walker_rng(seed, 0);
            let k = config.samples.min(sites.len());
            let mut anchors: Vec<usize> = sample_indices(&mut rng, sites.len(), k).into_iter().map(|i| sites[i]).collect();
            anchors.sort_unstable();
            let first = hat_chains(&field, &strong, &anchors).into_iter().collect::<Result<Vec<_>, _>>()?;
            let mut targets: Vec<usize> = first.iter().flat_map(|r| r.row.iter().map(|(y, _)| *y)).collect();
            targets.sort_unstable();
            targets.dedup();
            targets.retain(|y| anchors.binary_search(y).is_err());
            let mut all = first;
            all.extend(hat_chains(&field, &strong, &targets).into_iter().collect::<Result<Vec<_>, _>>()?);
            let (sym, sum) = symmetry_and_row_residuals(&all);
            let census = hiding_time_census(&field, &strong, &anchors)?;
            let mut rows_csv = Vec::new();
            write_rows_csv(&field, &all[..anchors.len()], &mut rows_csv)?;
            let mut census_csv = Vec::new();
            census.write_csv(&mut census_csv)?;
            let mut plot = Vec::new();
            for r in &census.rows {
                writeln!(plot, "{} {:.12e}", r.size, r.expected_hiding_time)?;
            }
            Ok(Row {
                id,
                record: TaskRecord { id, seed, field_seed: Some(seed), rejections: 0 },
                sym,
                sum,
                violations: census.violations().len(),
                anchors: anchors.len(),
                rows_csv,
                census_csv,
                plot,
                mean_size: census.mean_size,
            })
        })
        .collect::<Result<_>>()?;
    let (mut sym, mut sum, mut violations, mut anchors) = (0.0f64, 0.0f64, 0usize, 0usize);
    let mut sizes = Vec::new();
    for r in rows {
        outcome.tasks.push(r.record);
        sym = sym.max(r.sym);
        sum = sum.max(r.sum);
        violations += r.violations;
        anchors += r.anchors;
        sizes.push(r.mean_size);
        out.write(format!("hat_rows_{:03}.csv", r.id), OutputKind::Table, &r.rows_csv)?;
        out.write(format!("census_{:03}.csv", r.id), OutputKind::Table, &r.census_csv)?;
        out.write(format!("hiding_{:03}.dat", r.id), OutputKind::Plot, &r.plot)?;
    }
    outcome.check("coarse chain symmetry", sym < 1e-10, format!("residual {sym:e}"));
    outcome.check("coarse chain row sums", sum < 1e-10, format!("residual {sum:e}"));
    outcome.check(
        "hiding time bound E T_1 <= (4d/alpha)|G_x|",
        violations == 0,
        format!("{violations} violations over {anchors} anchors"),
    );
    outcome.fits.push(summarise("mean |G_x|", sizes, f64::NAN));
    Ok(outcome)
}

fn iso_profile(config: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    type IsoTask = (usize, TaskRecord, Vec<rcm_core::iso::IsoCheck>, Vec<String>);
    let tasks: Vec<IsoTask> = task_seeds(config, config.ensemble)
        .into_par_iter()
        .map(|(id, seed)| -> Result<IsoTask> {
            let field = sample_field(config.d, config.radius, &config.law, seed)?;
            let alpha = strong_alpha(config, &field)?;
            let params = IsoParams { samples: config.samples, seed, ..IsoParams::default() };
            let mut checks = Vec::new();
            let mut errors = Vec::new();
            for &r in &config.n_grid {
                match check_isoperimetry(&field, alpha, r as u32, &params) {
                    Ok(c) => checks.push(c),
                    Err(e) => errors.push(format!("task {id}, R = {r}: {e}")),
                }
            }
            Ok((id, TaskRecord { id, seed, field_seed: Some(seed), rejections: 0 }, checks, errors))
        })
        .collect::<Result<_>>()?;
    let mut positive = true;
    let mut errors = Vec::new();
    let mut spreads = Vec::new();
    for (id, record, checks, errs) in tasks {
        outcome.tasks.push(record);
        errors.extend(errs);
        positive &= checks.iter().all(|c| c.min_ratio > 0.0);
        let ratios: Vec<f64> = checks.iter().map(|c| c.min_ratio).collect();
        if let (Some(lo), Some(hi)) = (
            ratios.iter().cloned().reduce(f64::min),
            ratios.iter().cloned().reduce(f64::max),
        ) {
            spreads.push((hi - lo) / hi);
        }
        out.with(format!("iso_{id:03}.csv"), OutputKind::Table, |b| Ok(write_iso_csv(&checks, b)?))?;
        out.with(format!("iso_{id:03}.dat"), OutputKind::Plot, |b| {
            for c in &checks {
                writeln!(b, "{} {:.12e}", c.radius, c.min_ratio)?;
            }
            Ok(())
        })?;
    }
    outcome.check(
        "minimal boundary ratio positive",
        positive && errors.is_empty(),
        if errors.is_empty() { "all radii".into() } else { errors.join("; ") },
    );
    outcome.fits.push(summarise("relative spread of min ratio over R", spreads, f64::NAN));
    Ok(outcome)
}

fn gn_scan(config: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let ConductanceLaw::BernoulliPerc { p } = config.law else {
        bail!("law: gn-scan needs a bernoulli law");
    };
    let rows: Vec<(u32, f64, f64, f64)> = task_seeds(config, config.n_grid.len())
        .into_par_iter()
        .map(|(i, seed)| -> Result<(u32, f64, f64, f64)> {
            let n = config.n_grid[i] as u32;
            let (est, se) = gn_probability(p, n, config.d, config.ensemble as u64, seed)?;
            Ok((n, p, est, se))
        })
        .collect::<Result<_>>()?;
    for (i, seed) in task_seeds(config, rows.len()) {
        outcome.tasks.push(TaskRecord { id: i, seed, field_seed: None, rejections: 0 });
    }
    out.with("gn.csv".into(), OutputKind::Table, |b| Ok(write_gn_csv(&rows, b)?))?;
    out.with("gn.dat".into(), OutputKind::Plot, |b| {
        for (n, _, e, _) in &rows {
            writeln!(b, "{n} {e:.12e}")?;
        }
        Ok(())
    })?;
    if p > bond_threshold(config.d) && rows.len() >= 2 {
        let (a, b) = (rows[0], rows[rows.len() - 1]);
        let combined = (a.3 * a.3 + b.3 * b.3).sqrt();
        outcome.check(
            "G_N probability does not decrease (supercritical p)",
            b.2 >= a.2 - 4.0 * combined,
            format!("N={}: {:.4} -> N={}: {:.4} (combined stderr {combined:.4})", a.0, a.2, b.0, b.2),
        );
    }
    Ok(outcome)
}

fn trap_census(config: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    type CensusTask = (usize, TaskRecord, Vec<rcm_core::traps::TrapRecord>);
    let tasks: Vec<CensusTask> = task_seeds(config, config.ensemble)
        .into_par_iter()
        .map(|(id, seed)| -> Result<CensusTask> {
            let field = sample_field(config.d, config.radius, &config.law, seed)?;
            let alpha = strong_alpha(config, &field)?;
            let labeling = components(&field, alpha);
            let traps = detect_traps(&field, &labeling, config.weak_max);
            Ok((id, TaskRecord { id, seed, field_seed: Some(seed), rejections: 0 }, traps))
        })
        .collect::<Result<_>>()?;
    let ln_n: Vec<f64> = config.n_grid.iter().map(|n| (*n as f64).ln()).collect();
    let mut monotone = true;
    let mut slopes = Vec::new();
    let mut r2 = Vec::new();
    for (id, record, traps) in tasks {
        outcome.tasks.push(record);
        let sums: Vec<f64> = config.n_grid.iter().map(|&n| trap_sum(&traps, n as u64, config.d)).collect();
        monotone &= sums.windows(2).all(|w| w[1] >= w[0]);
        if let Ok(fit) = linear_fit(&ln_n, &sums) {
            slopes.push(fit.slope);
            r2.push(fit.r_squared);
        }
        out.with(format!("traps_{id:03}.csv"), OutputKind::Table, |b| Ok(write_traps_csv(&traps, b)?))?;
        out.with(format!("trap_sum_{id:03}.csv"), OutputKind::Table, |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["n", "trap_sum"])?;
            for (n, s) in config.n_grid.iter().zip(&sums) {
                w.write_record([n.to_string(), format!("{s:e}")])?;
            }
            w.flush()?;
            Ok(())
        })?;
        out.with(format!("trap_sum_{id:03}.dat"), OutputKind::Plot, |b| {
            for (l, s) in ln_n.iter().zip(&sums) {
                writeln!(b, "{l:.12e} {s:.12e}")?;
            }
            Ok(())
        })?;
    }
    outcome.check("trap sum non-decreasing in n", monotone, format!("{} fields", outcome.tasks.len()));
    if !slopes.is_empty() {
        outcome.fits.push(summarise("trap-sum slope in ln n", slopes, f64::NAN));
        outcome.fits.push(summarise("trap-sum fit R^2", r2, f64::NAN));
    }
    Ok(outcome)
}

fn trap_bound(config: &ExperimentConfig, threads: usize, out: &mut Outputs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let grid = capped_grid(config, threads.min(config.ensemble), &mut outcome)?;
    let n_max = *grid.last().expect("non-empty grid");
    let origin = vec![0; config.d];
    type BoundTask = (usize, TaskRecord, usize, Result<Vec<BoundRow>, String>);
    let tasks: Vec<BoundTask> = task_seeds(config, config.ensemble)
        .into_par_iter()
        .map(|(id, seed)| -> Result<BoundTask> {
            let (field, field_seed, rejections) = conditioned_field(config, seed)?;
            let record = TaskRecord { id, seed, field_seed: Some(field_seed), rejections };
            let alpha = strong_alpha(config, &field)?;
            let traps = detect_traps(&field, &components(&field, alpha), config.weak_max);
            let series = match return_series(&field, &origin, n_max, 1) {
                Ok(s) => s,
                Err(RcmError::Monotonicity { n, .. }) => {
                    return Ok((id, record, traps.len(), Err(format!("task {id}: increase at n = {n}"))))
                }
                Err(e) => return Err(e.into()),
            };
            let mut rows = Vec::new();
            for &n in &grid {
                let mut lower = 0.0;
                for t in &traps {
                    match trap_lower_bound(&field, t, n, None) {
                        Ok(b) => lower += b.value,
                        Err(RcmError::Disconnected(..)) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
                rows.push(BoundRow { n, exact: series.value_at(n).unwrap_or(0.0), lower_bound: lower });
            }
            Ok((id, record, traps.len(), Ok(rows)))
        })
        .collect::<Result<_>>()?;
    let mut violations = Vec::new();
    let mut trap_counts = Vec::new();
    for (id, record, count, rows) in tasks {
        outcome.tasks.push(record);
        trap_counts.push(count as f64);
        let rows = match rows {
            Ok(r) => r,
            Err(e) => {
                violations.push(e);
                continue;
            }
        };
        for r in &rows {
            if r.lower_bound > r.exact * (1.0 + 1e-12) {
                violations.push(format!("task {id}, n = {}: bound {:e} > exact {:e}", r.n, r.lower_bound, r.exact));
            }
        }
        out.with(format!("bounds_{id:03}.csv"), OutputKind::Table, |b| Ok(write_bounds_csv(&rows, b)?))?;
        out.with(format!("bounds_{id:03}.dat"), OutputKind::Plot, |b| {
            for r in rows.iter().filter(|r| r.lower_bound > 0.0) {
                writeln!(b, "{} {:.12e}", r.n, r.ratio())?;
            }
            Ok(())
        })?;
    }
    outcome.check(
        "exact return probability dominates trap bound",
        violations.is_empty(),
        if violations.is_empty() { format!("{} fields", outcome.tasks.len()) } else { violations.join("; ") },
    );
    outcome.fits.push(summarise("traps per field", trap_counts, f64::NAN));
    Ok(outcome)
}

fn annealed(config: &ExperimentConfig, threads: usize, out: &mut Outputs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let grid = capped_grid(config, threads.min(config.n_grid.len()), &mut outcome)?;
    let estimates: Vec<_> = grid
        .par_iter()
        .map(|&n| annealed_return(&config.law, config.d, config.radius, n, config.ensemble, config.seed))
        .collect::<Result<_, _>>()?;
    for (id, _) in grid.iter().enumerate() {
        outcome.tasks.push(TaskRecord { id, seed: config.seed, field_seed: None, rejections: estimates[id].rejected as u64 });
    }
    let series = KernelSeries {
        origin: vec![0; config.d],
        points: grid
            .iter()
            .zip(&estimates)
            .map(|(&n, e)| SeriesPoint { n, value: e.mean, stderr: e.stderr })
            .collect(),
        method: Method::Exact,
        meta: SeriesMeta { d: config.d, radius: config.radius, alpha: None, law_id: config.law.id(), seed: config.seed },
        max_mass_deviation: 0.0,
        flushed: 0,
    };
    out.with("annealed.csv".into(), OutputKind::Table, |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["n", "mean", "stderr", "accepted", "rejected"])?;
        for (n, e) in grid.iter().zip(&estimates) {
            w.write_record([n.to_string(), format!("{:e}", e.mean), format!("{:e}", e.stderr), e.accepted.to_string(), e.rejected.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.with("annealed.dat".into(), OutputKind::Plot, |b| Ok(series.write_plot(b)?))?;
    let violation = series.monotonicity_violation(1e-12);
    outcome.check(
        "annealed return probability non-increasing",
        violation.is_none(),
        violation.map_or_else(|| format!("{} times", grid.len()), |(n, a, b)| format!("increase at n = {n}: {a:e} -> {b:e}")),
    );
    let window = (config.fit_window().0, config.fit_window().1.min(*grid.last().expect("non-empty grid")));
    let with_log = config.log_correction();
    match fit_decay(&series, window, with_log) {
        Ok(fit) => {
            out.json("fit.json".into(), &fit)?;
            let (ns, vs): (Vec<usize>, Vec<f64>) = series
                .points
                .iter()
                .filter(|p| p.n >= window.0 && p.n <= window.1)
                .map(|p| (p.n, p.value))
                .unzip();
            let se = exponent_with_stderr(&ns, &vs, with_log).map_or(f64::NAN, |(_, se)| se);
            outcome.fits.push(summarise("annealed exponent", vec![fit.exponent], se));
            outcome.check("decay fit", true, format!("n in [{}, {}]", window.0, window.1));
        }
        Err(e) => outcome.check("decay fit", false, e.to_string()),
    }
    Ok(outcome)
}

/// Writes `field.rcmf` and the component histogram for one sampled field.
pub fn sample_to(dir: &Path, law: &ConductanceLaw, d: usize, radius: u32, seed: u64, alpha: f64) -> Result<(PathBuf, u64)> {
    fs::create_dir_all(dir)?;
    let field = sample_field(d, radius, law, seed)?;
    let path = dir.join("field.rcmf");
    let file = fs::File::create(&path)?;
    rcm_core::env::write_field(&field, std::io::BufWriter::new(file))?;
    let labeling = components(&field, alpha);
    labeling.write_csv(fs::File::create(dir.join("components.csv"))?)?;
    Ok((path, field.fingerprint()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_stderr_vanishes_on_exact_power_law() {
        let ns: Vec<usize> = (4..20).map(|k| 2 * k).collect();
        let vs: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-1.5)).collect();
        let (a, se) = exponent_with_stderr(&ns, &vs, false).unwrap();
        assert!((a - 1.5).abs() < 1e-12);
        assert!(se < 1e-10);
    }

    #[test]
    fn log_term_is_separated() {
        let ns: Vec<usize> = (4..40).map(|k| 2 * k).collect();
        let vs: Vec<f64> = ns.iter().map(|&n| (n as f64).powi(-2) * (n as f64).ln()).collect();
        let (a, _) = exponent_with_stderr(&ns, &vs, true).unwrap();
        assert!((a - 2.0).abs() < 1e-9);
    }

    #[test]
    fn kernel_memory_estimate() {
        assert_eq!(kernel_bytes(2, 1), 9 * 24);
        assert_eq!(kernel_bytes(3, 0), 24);
    }
}
