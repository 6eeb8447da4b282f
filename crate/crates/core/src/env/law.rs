use serde::{Deserialize, Serialize};

use crate::error::{RcmError, Result};

/// Deepest dyadic level `2^{-N}` represented by [`ConductanceLaw::DyadicPolyLog`].
pub const DYADIC_MAX_LEVEL: u32 = 63;

const PROB_TOL: f64 = 1e-12;

/// Configured bond-percolation thresholds, used only for warnings.
pub fn bond_threshold(d: usize) -> f64 {
    match d {
        0 | 1 => 1.0,
        2 => 0.5,
        3 => 0.248_811_82,
        4 => 0.160_131_22,
        5 => 0.118_171_45,
        6 => 0.094_201_65,
        7 => 0.078_675_2,
        _ => 1.0 / (2.0 * d as f64 - 1.0),
    }
}

/// One level of a [`ConductanceLaw::SparseScales`] table: conductance
/// `1 / n` is carried by the mass between consecutive `1 / q` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseScale {
    pub n: f64,
    pub q: f64,
}

impl SparseScale {
    /// `q_n = ((1/2) log λ_n / log(2d))^{1/4}`.
    pub fn q_from_lambda(lambda: f64, d: usize) -> f64 {
        (0.5 * lambda.ln() / (2.0 * d as f64).ln()).powf(0.25)
    }
}

/// I.i.d. law of a single bond conductance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConductanceLaw {
    Homogeneous { value: f64 },
    BernoulliPerc { p: f64 },
    /// `P(ω=1) = p1`, `P(ω=2^{-N}) = c N^{-(1+ε)}` for `N ≥ 1`.
    DyadicPolyLog { p1: f64, epsilon: f64 },
    SparseScales { scales: Vec<SparseScale> },
    /// `ω = 1` with probability `p`, else `1/n`.
    TwoValue { p: f64, n: f64 },
    /// Bond value is the minimum of i.i.d. site values.
    WedgeMin { values: Vec<f64>, probs: Vec<f64> },
    CustomTable { values: Vec<f64>, probs: Vec<f64> },
}

/// Finite table of values with an inverse-CDF sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    values: Vec<f64>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl ValueTable {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(RcmError::InvalidLaw("values and probabilities must pair up".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RcmError::InvalidLaw(format!("conductance {v} outside [0,1]")));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0)) {
            return Err(RcmError::InvalidLaw(format!("negative probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(RcmError::InvalidLaw(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { values, probs, cdf })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index of the table entry selected by a uniform `u ∈ [0,1)`.
    #[inline]
    pub fn sample_index(&self, u: f64) -> usize {
        let i = self.cdf.partition_point(|&c| c <= u);
        // Rounding can leave the last cdf entry a hair below 1.
        i.min(self.values.len() - 1)
    }

    /// Probability that the value is at least `threshold`.
    pub fn mass_at_least(&self, threshold: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .filter(|(v, _)| **v >= threshold)
            .map(|(_, p)| p)
            .sum()
    }
}

/// `Σ_{N≥1} N^{-s}` for `s > 1`, by direct summation plus an
/// Euler–Maclaurin tail.
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta needs s > 1");
    const M: usize = 10_000;
    let head: f64 = (1..M).rev().map(|n| (n as f64).powf(-s)).sum();
    let m = M as f64;
    let tail = m.powf(1.0 - s) / (s - 1.0) + 0.5 * m.powf(-s) + s * m.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * m.powf(-s - 3.0) / 720.0;
    head + tail
}

impl ConductanceLaw {
    /// Normalising constant `c = (1 - p1) / Σ N^{-(1+ε)}` of the dyadic law.
    pub fn dyadic_constant(p1: f64, epsilon: f64) -> f64 {
        (1.0 - p1) / zeta(1.0 + epsilon)
    }

    /// Whether bonds are built from site variables.
    pub fn is_wedge(&self) -> bool {
        matches!(self, ConductanceLaw::WedgeMin { .. })
    }

    /// The sampling table: bond values, or site values for `WedgeMin`.
    pub fn table(&self) -> Result<ValueTable> {
        use ConductanceLaw::*;
        match self {
            Homogeneous { value } => {
                if !(*value > 0.0 && *value <= 1.0) {
                    return Err(RcmError::InvalidLaw(format!(
                        "homogeneous value {value} outside (0,1]"
                    )));
                }
                ValueTable::new(vec![*value], vec![1.0])
            }
            BernoulliPerc { p } => {
                check_unit("p", *p)?;
                ValueTable::new(vec![1.0, 0.0], vec![*p, 1.0 - p])
            }
            TwoValue { p, n } => {
                check_unit("p", *p)?;
                if !(*n >= 1.0) {
                    return Err(RcmError::InvalidLaw(format!("n = {n} must be ≥ 1")));
                }
                ValueTable::new(vec![1.0, 1.0 / n], vec![*p, 1.0 - p])
            }
            DyadicPolyLog { p1, epsilon } => {
                check_unit("p1", *p1)?;
                if !(*epsilon > 0.0) {
                    return Err(RcmError::InvalidLaw("epsilon must be positive".into()));
                }
                let c = Self::dyadic_constant(*p1, *epsilon);
                let mut values = vec![1.0];
                let mut probs = vec![*p1];
                let mut used = *p1;
                for level in 1..DYADIC_MAX_LEVEL {
                    let p = c * (level as f64).powf(-(1.0 + epsilon));
                    values.push((-(level as f64)).exp2());
                    probs.push(p);
                    used += p;
                }
                values.push((-(DYADIC_MAX_LEVEL as f64)).exp2());
                probs.push((1.0 - used).max(0.0));
                ValueTable::new(values, probs)
            }
            SparseScales { scales } => {
                if scales.is_empty() {
                    return Err(RcmError::InvalidLaw("empty scale table".into()));
                }
                for w in scales.windows(2) {
                    if !(w[1].q > 2.0 * w[0].q) {
                        return Err(RcmError::InvalidLaw(format!(
                            "scale table needs q_(k+1) > 2 q_k, got {} after {}",
                            w[1].q, w[0].q
                        )));
                    }
                }
                if let Some(s) = scales.iter().find(|s| !(s.q >= 1.0) || !(s.n >= 1.0)) {
                    return Err(RcmError::InvalidLaw(format!("bad scale {s:?}")));
                }
                let mut values = vec![1.0];
                let mut probs = vec![1.0 - 1.0 / scales[0].q];
                for (k, s) in scales.iter().enumerate() {
                    values.push(1.0 / s.n);
                    let next = scales.get(k + 1).map_or(0.0, |t| 1.0 / t.q);
                    probs.push(1.0 / s.q - next);
                }
                ValueTable::new(values, probs)
            }
            WedgeMin { values, probs } => {
                if values.iter().any(|v| *v <= 0.0) {
                    return Err(RcmError::InvalidLaw("wedge site values must be positive".into()));
                }
                ValueTable::new(values.clone(), probs.clone())
            }
            CustomTable { values, probs } => ValueTable::new(values.clone(), probs.clone()),
        }
    }

    /// Probability that a bond carries conductance one (the "strong" mass the
    /// constructions need above threshold), or `P(ω > 0)` for percolation.
    pub fn strong_mass(&self) -> Result<f64> {
        let table = self.table()?;
        Ok(match self {
            ConductanceLaw::BernoulliPerc { p } => *p,
            ConductanceLaw::WedgeMin { .. } => {
                let s = table.mass_at_least(1.0);
                s * s
            }
            _ => table.mass_at_least(1.0),
        })
    }

    /// Non-fatal diagnostics, e.g. a strong mass at or below `p_c(d)`.
    pub fn warnings(&self, d: usize) -> Vec<String> {
        let mut out = Vec::new();
        let pc = bond_threshold(d);
        let check = match self {
            ConductanceLaw::DyadicPolyLog { p1, .. } => Some(("p1", *p1)),
            ConductanceLaw::TwoValue { p, .. } => Some(("p", *p)),
            ConductanceLaw::BernoulliPerc { p } => Some(("p", *p)),
            ConductanceLaw::SparseScales { scales } => {
                scales.first().map(|s| ("1 - 1/q_1", 1.0 - 1.0 / s.q))
            }
            _ => None,
        };
        if let Some((name, v)) = check {
            if v <= pc {
                out.push(format!("{name} = {v} does not exceed p_c({d}) = {pc}"));
            }
        }
        out
    }

    /// Short stable identifier used in CSV outputs.
    pub fn id(&self) -> String {
        use ConductanceLaw::*;
        match self {
            Homogeneous { value } => format!("homogeneous({value})"),
            BernoulliPerc { p } => format!("bernoulli({p})"),
            DyadicPolyLog { p1, epsilon } => format!("dyadic({p1},{epsilon})"),
            SparseScales { scales } => format!("sparse_scales({})", scales.len()),
            TwoValue { p, n } => format!("two_value({p},{n})"),
            WedgeMin { values, .. } => format!("wedge_min({})", values.len()),
            CustomTable { values, .. } => format!("custom({})", values.len()),
        }
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(RcmError::InvalidLaw(format!("{name} = {v} outside [0,1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_matches_known_values() {
        assert!((zeta(2.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-12);
        assert!((zeta(1.5) - 2.612_375_348_685_488).abs() < 1e-12);
    }

    #[test]
    fn dyadic_constant_for_half_epsilon() {
        let c = ConductanceLaw::dyadic_constant(0.7, 0.5);
        assert!((c - 0.3 / 2.612_375_348_685_488).abs() < 1e-14);
        assert!((c - 0.11485).abs() < 2e-5);
    }

    #[test]
    fn every_table_sums_to_one() {
        let laws = [
            ConductanceLaw::Homogeneous { value: 0.5 },
            ConductanceLaw::BernoulliPerc { p: 0.3 },
            ConductanceLaw::DyadicPolyLog { p1: 0.7, epsilon: 0.1 },
            ConductanceLaw::TwoValue { p: 0.7, n: 100.0 },
            ConductanceLaw::SparseScales {
                scales: vec![
                    SparseScale { n: 4.0, q: 3.0 },
                    SparseScale { n: 16.0, q: 7.0 },
                ],
            },
        ];
        for law in laws {
            let t = law.table().unwrap();
            let s: f64 = t.probs().iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "{law:?}");
            assert!(t.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn invalid_laws_are_rejected() {
        let bad = ConductanceLaw::CustomTable { values: vec![1.0, 0.5], probs: vec![0.5, 0.4] };
        assert!(bad.table().is_err());
        let out_of_range = ConductanceLaw::CustomTable { values: vec![1.5], probs: vec![1.0] };
        assert!(out_of_range.table().is_err());
        let scales = ConductanceLaw::SparseScales {
            scales: vec![SparseScale { n: 4.0, q: 3.0 }, SparseScale { n: 8.0, q: 5.0 }],
        };
        assert!(scales.table().is_err());
    }

    #[test]
    fn subcritical_strong_mass_only_warns() {
        let law = ConductanceLaw::TwoValue { p: 0.4, n: 10.0 };
        assert!(law.table().is_ok());
        assert_eq!(law.warnings(2).len(), 1);
        assert!(law.warnings(3).is_empty());
    }

    #[test]
    fn q_from_lambda_formula() {
        let lambda = (2.0f64 * 4.0).powi(2 * 16);
        // (1/2) * 32 log 8 / log 8 = 16, fourth root 2
        assert!((SparseScale::q_from_lambda(lambda, 4) - 2.0).abs() < 1e-12);
    }
}
