//! Experiment configuration.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rcm_core::env::{law_from_json, ConductanceLaw};
use rcm_core::kernel::DEFAULT_MEMORY_CAP;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    DecayFit,
    CoarseCheck,
    IsoProfile,
    GnScan,
    TrapCensus,
    TrapBound,
    Annealed,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::DecayFit => "decay-fit",
            Self::CoarseCheck => "coarse-check",
            Self::IsoProfile => "iso-profile",
            Self::GnScan => "gn-scan",
            Self::TrapCensus => "trap-census",
            Self::TrapBound => "trap-bound",
            Self::Annealed => "annealed",
        }
    }

    /// Kinds that evolve the exact kernel for `n` steps.
    pub fn uses_exact_kernel(&self) -> bool {
        matches!(self, Self::DecayFit | Self::TrapBound | Self::Annealed)
    }
}

/// Error naming the offending config field.
#[derive(Debug, thiserror::Error)]
#[error("invalid config field `{field}`: {reason}")]
pub struct ValidationError {
    pub field: &'static str,
    pub reason: String,
}

fn bad(field: &'static str, reason: impl Into<String>) -> ValidationError {
    ValidationError { field, reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub law: ConductanceLaw,
    pub d: usize,
    /// Box radius `L`.
    #[serde(rename = "L")]
    pub radius: u32,
    /// Strong threshold; chosen from the law when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Times (step counts) for kernel kinds, radii for `iso-profile`, block
    /// scales `N` for `gn-scan`.
    pub n_grid: Vec<usize>,
    /// Inclusive range of `n` used by decay fits. Defaults to the upper
    /// three octaves of the grid.
    #[serde(default)]
    pub fit_range: Option<(usize, usize)>,
    /// Fit `ln ln n` as well (on by default for `d = 4`).
    #[serde(default)]
    pub with_log: Option<bool>,
    #[serde(default = "one")]
    pub ensemble: usize,
    pub seed: u64,
    /// Monte Carlo walkers for cross-checks; 0 disables them.
    #[serde(default)]
    pub walkers: u64,
    /// Anchors for `coarse-check`, grown sets for `iso-profile`.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Largest weak conductance accepted in a trap.
    #[serde(default = "default_weak_max")]
    pub weak_max: f64,
    /// Byte budget for exact kernels and stored fields, shared by
    /// concurrently running tasks.
    #[serde(default = "default_cap")]
    pub memory_cap: usize,
    /// Output directory. Not part of the config hash.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads. Not part of the config hash.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn one() -> usize {
    1
}

fn default_samples() -> usize {
    100
}

fn default_weak_max() -> f64 {
    0.5
}

fn default_cap() -> usize {
    DEFAULT_MEMORY_CAP
}

impl ExperimentConfig {
    /// Config with defaults for everything but the essentials.
    pub fn new(kind: ExperimentKind, law: ConductanceLaw, d: usize, radius: u32, n_grid: Vec<usize>, seed: u64) -> Self {
        Self {
            kind,
            law,
            d,
            radius,
            alpha: None,
            n_grid,
            fit_range: None,
            with_log: None,
            ensemble: 1,
            seed,
            walkers: 0,
            samples: default_samples(),
            weak_max: default_weak_max(),
            memory_cap: default_cap(),
            output: None,
            threads: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("parsing experiment config")?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n_max(&self) -> usize {
        self.n_grid.iter().copied().max().unwrap_or(0)
    }

    pub fn log_correction(&self) -> bool {
        self.with_log.unwrap_or(self.d == 4)
    }

    /// Fit window: the configured one, or `[n_max/8, n_max]`.
    pub fn fit_window(&self) -> (usize, usize) {
        self.fit_range.unwrap_or_else(|| {
            let top = self.n_max();
            ((top / 8).max(2), top)
        })
    }

    /// sha256 of the canonical JSON with `output` and `threads` cleared.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        c.threads = None;
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        format!("{:x}", Sha256::digest(bytes))
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(2..=rcm_core::lattice::MAX_DIM).contains(&self.d) {
            return Err(bad("d", format!("{} not in 2..={}", self.d, rcm_core::lattice::MAX_DIM)));
        }
        if self.radius == 0 {
            return Err(bad("L", "must be positive"));
        }
        self.law.table().map_err(|e| bad("law", e.to_string()))?;
        if self.n_grid.is_empty() {
            return Err(bad("n_grid", "empty"));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("n_grid", "must be strictly increasing"));
        }
        if self.n_grid[0] == 0 {
            return Err(bad("n_grid", "entries must be positive"));
        }
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(bad("alpha", format!("{a} outside [0,1]")));
            }
        }
        if self.ensemble == 0 {
            return Err(bad("ensemble", "must be positive"));
        }
        if self.threads == Some(0) {
            return Err(bad("threads", "must be positive"));
        }
        if !(self.weak_max > 0.0 && self.weak_max < 1.0) {
            return Err(bad("weak_max", format!("{} outside (0,1)", self.weak_max)));
        }
        let n_max = self.n_max();
        if self.kind.uses_exact_kernel() {
            if (self.radius as usize) < n_max {
                return Err(bad("L", format!("L = {} < n_max = {n_max}", self.radius)));
            }
            if let Some(n) = self.n_grid.iter().find(|n| *n % 2 == 1) {
                return Err(bad("n_grid", format!("odd time {n}: return probabilities vanish at odd n")));
            }
        }
        match self.kind {
            ExperimentKind::DecayFit | ExperimentKind::Annealed => {
                let (lo, hi) = self.fit_window();
                if lo > hi {
                    return Err(bad("fit_range", format!("empty range ({lo}, {hi})")));
                }
                let inside = self.n_grid.iter().filter(|n| **n >= lo && **n <= hi).count();
                if inside < 4 {
                    return Err(bad("fit_range", format!("only {inside} grid points in ({lo}, {hi}), need 4")));
                }
                if self.kind == ExperimentKind::Annealed && self.ensemble < 2 {
                    return Err(bad("ensemble", "annealed averages need at least 2 fields"));
                }
            }
            ExperimentKind::IsoProfile => {
                if let Some(r) = self.n_grid.iter().find(|r| **r > self.radius as usize) {
                    return Err(bad("n_grid", format!("radius {r} exceeds L = {}", self.radius)));
                }
                if self.samples == 0 {
                    return Err(bad("samples", "must be positive"));
                }
            }
            ExperimentKind::GnScan => {
                if !matches!(self.law, ConductanceLaw::BernoulliPerc { .. }) {
                    return Err(bad("law", "gn-scan needs a bernoulli law"));
                }
                if n_max > u32::MAX as usize {
                    return Err(bad("n_grid", "block scale too large"));
                }
            }
            ExperimentKind::CoarseCheck => {
                if self.samples == 0 {
                    return Err(bad("samples", "must be positive"));
                }
            }
            ExperimentKind::TrapCensus | ExperimentKind::TrapBound => {}
        }
        Ok(())
    }
}

/// Parses `name:args` shorthands or a JSON law object.
///
/// `homogeneous:1`, `bernoulli:0.7`, `two-value:0.7,100`, `dyadic:0.8,0.5`.
pub fn parse_law(text: &str) -> Result<ConductanceLaw> {
    let text = text.trim();
    if text.starts_with('{') {
        return Ok(law_from_json(text)?);
    }
    let (name, args) = text.split_once(':').unwrap_or((text, ""));
    let nums: Vec<f64> = args
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad number `{s}` in law `{text}`")))
        .collect::<Result<_>>()?;
    let want = |k: usize| -> Result<()> {
        if nums.len() != k {
            bail!("law `{name}` takes {k} argument(s), got {}", nums.len());
        }
        Ok(())
    };
    let law = match name {
        "homogeneous" => {
            want(1)?;
            ConductanceLaw::Homogeneous { value: nums[0] }
        }
        "bernoulli" => {
            want(1)?;
            ConductanceLaw::BernoulliPerc { p: nums[0] }
        }
        "two-value" => {
            want(2)?;
            ConductanceLaw::TwoValue { p: nums[0], n: nums[1] }
        }
        "dyadic" => {
            want(2)?;
            ConductanceLaw::DyadicPolyLog { p1: nums[0], epsilon: nums[1] }
        }
        other => bail!("unknown law `{other}` (use homogeneous, bernoulli, two-value, dyadic or JSON)"),
    };
    law.table()?;
    Ok(law)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> ExperimentConfig {
        ExperimentConfig::new(
            ExperimentKind::DecayFit,
            ConductanceLaw::Homogeneous { value: 1.0 },
            2,
            64,
            (1..=32).map(|k| 2 * k).collect(),
            7,
        )
    }

    #[test]
    fn json_round_trip() {
        let mut c = decay();
        c.alpha = Some(0.5);
        c.fit_range = Some((8, 64));
        c.output = Some("out".into());
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_ignores_output_and_threads() {
        let a = decay();
        let mut b = decay();
        b.output = Some("elsewhere".into());
        b.threads = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn short_box_names_l() {
        let mut c = decay();
        c.radius = 10;
        let e = c.validate().unwrap_err();
        assert_eq!(e.field, "L");
    }

    #[test]
    fn odd_times_are_rejected() {
        let mut c = decay();
        c.n_grid = vec![1, 2, 4, 6, 8];
        assert_eq!(c.validate().unwrap_err().field, "n_grid");
    }

    #[test]
    fn law_shorthands() {
        assert_eq!(parse_law("bernoulli:0.7").unwrap(), ConductanceLaw::BernoulliPerc { p: 0.7 });
        assert_eq!(parse_law("two-value:0.7,100").unwrap(), ConductanceLaw::TwoValue { p: 0.7, n: 100.0 });
        assert!(parse_law("two-value:0.7").is_err());
        assert!(parse_law("bernoulli:1.5").is_err());
        let json = r#"{"kind":"custom_table","values":[0.5,1.0],"probs":[0.5,0.5]}"#;
        assert!(matches!(parse_law(json).unwrap(), ConductanceLaw::CustomTable { .. }));
    }
}
