//! Isoperimetric profile `Φ(r) = inf{Φ_S : π(S) ≤ r}` and the evolving-set
//! step bound built on it.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::enumerate::{connected_subsets, grow_connected, refine_by_swaps};
use super::ChainView;
use crate::error::{RcmError, Result};
use crate::rng::walker_rng;
use crate::scalar::Scalar;

/// Largest state space searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ProfileMode {
    /// Every connected set.
    Exhaustive,
    /// Random grown sets with swap refinement.
    Grown { samples: usize, seed: u64 },
}

/// Step function: `Φ(u) = points[i].1` for `points[i].0 ≤ u < points[i+1].0`,
/// constant after the last point, undefined before the first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileEstimate {
    pub points: Vec<(f64, f64)>,
    pub mode: ProfileMode,
    /// `true` only for exhaustive search: the values are the exact infimum.
    /// Heuristic values are upper bounds on `Φ(r)`.
    pub exact: bool,
    /// Values sampled at grid points rather than exact breakpoints; the
    /// integrator then uses the right end of each cell.
    pub sampled_grid: bool,
}

impl ProfileEstimate {
    /// Profile given by values at grid points `r`.
    pub fn from_grid(points: Vec<(f64, f64)>, exact: bool) -> Result<Self> {
        if points.is_empty() || points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(RcmError::InvalidArgument("grid must be strictly increasing and non-empty".into()));
        }
        Ok(Self { points, mode: ProfileMode::Exhaustive, exact, sampled_grid: true })
    }

    pub fn value_at(&self, r: f64) -> Option<f64> {
        let i = self.points.partition_point(|(x, _)| *x <= r);
        (i > 0).then(|| self.points[i - 1].1)
    }

    pub fn is_non_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 <= w[0].1)
    }

    /// Writes `r,phi,exact_flag`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "phi", "exact_flag"])?;
        for (r, phi) in &self.points {
            w.write_record([r.to_string(), phi.to_string(), self.exact.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `∫_a^b 4 / (u Φ(u)²) du` on the step function.
    fn integral(&self, a: f64, b: f64) -> Result<f64> {
        let mut total = 0.0;
        let n = self.points.len();
        for i in 0..n {
            let lo = if i == 0 { f64::NEG_INFINITY } else { self.points[i].0 };
            let hi = if i + 1 < n { self.points[i + 1].0 } else { f64::INFINITY };
            let (lo, hi) = (lo.max(a), hi.min(b));
            if hi <= lo {
                continue;
            }
            let phi = if self.sampled_grid && i + 1 < n {
                self.points[i + 1].1
            } else {
                self.points[i].1
            };
            if phi <= 0.0 {
                return Err(RcmError::InvalidArgument(format!("profile vanishes at r = {lo}")));
            }
            total += 4.0 / (phi * phi) * (hi / lo).ln();
        }
        Ok(total)
    }
}

fn step_function(mut candidates: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (r, phi) in candidates {
        match out.last_mut() {
            Some(last) if phi >= last.1 => {}
            Some(last) if last.0 == r => last.1 = phi,
            _ => out.push((r, phi)),
        }
    }
    out
}

/// Profile of `chain` over connected sets with `π(S) ≤ r_max`.
pub fn profile<S: Scalar>(chain: &ChainView<S>, r_max: f64, mode: ProfileMode) -> Result<ProfileEstimate> {
    let weights: Vec<f64> = chain.weights().iter().map(|w| w.as_f64()).collect();
    let min_pi = weights.iter().cloned().fold(f64::INFINITY, f64::min);
    if chain.is_empty() || r_max < min_pi {
        return Err(RcmError::InvalidArgument(format!(
            "r_max = {r_max} is below the smallest site weight {min_pi}"
        )));
    }
    let phi_of = |set: &[usize]| -> Option<(f64, f64)> {
        let pi: f64 = set.iter().map(|&i| weights[i]).sum();
        if pi > r_max {
            return None;
        }
        let (pi_s, _, q_out) = chain.flows(set);
        Some((pi, (q_out / pi_s).as_f64()))
    };
    let (candidates, exact) = match mode {
        ProfileMode::Exhaustive => {
            if chain.len() > EXHAUSTIVE_LIMIT {
                return Err(RcmError::InvalidArgument(format!(
                    "exhaustive search limited to {EXHAUSTIVE_LIMIT} states, chain has {}",
                    chain.len()
                )));
            }
            let mut c = Vec::new();
            connected_subsets(chain.adjacency(), chain.len(), |s| c.extend(phi_of(s)));
            (c, true)
        }
        ProfileMode::Grown { samples, seed } => {
            let adj = chain.adjacency();
            let c: Vec<(f64, f64)> = (0..samples as u64)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let mut rng = walker_rng(seed, i);
                    let start = rng.gen_range(0..chain.len());
                    let target = rng.gen_range(1..=chain.len());
                    let mut found = Vec::new();
                    let mut set = grow_connected(adj, start, target, &mut rng, |s| found.extend(phi_of(s)));
                    let rounds = 2 * set.len();
                    refine_by_swaps(adj, &mut set, rounds, &mut rng, |s| match phi_of(s) {
                        Some(v) => {
                            found.push(v);
                            v.1
                        }
                        None => f64::INFINITY,
                    });
                    found
                })
                .collect();
            (c, false)
        }
    };
    Ok(ProfileEstimate {
        points: step_function(candidates),
        mode,
        exact,
        sampled_grid: false,
    })
}

/// Profile handed to [`morris_peres_n`].
#[derive(Clone, Debug, PartialEq)]
pub enum ProfileFn {
    /// `Φ(u) = c · u^{-κ}`.
    PowerLaw { c: f64, kappa: f64 },
    Tabulated(ProfileEstimate),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorrisPeres {
    pub n: u64,
    /// Unrounded `1 + ((1−γ)²/γ²) ∫ 4/(uΦ(u)²) du`.
    pub bound: f64,
    /// Computed from a heuristic profile, so not a guaranteed bound.
    pub indicative: bool,
}

/// Smallest integer `n ≥ 1 + ((1−γ)²/γ²) ∫_{4(π_x∧π_y)}^{4/ε} 4/(uΦ(u)²) du`.
pub fn morris_peres_n(profile: &ProfileFn, gamma: f64, eps: f64, pi_x: f64, pi_y: f64) -> Result<MorrisPeres> {
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(RcmError::InvalidArgument(format!("laziness {gamma} outside (0, 1/2]")));
    }
    if eps <= 0.0 {
        return Err(RcmError::InvalidArgument("ε must be positive".into()));
    }
    let a = 4.0 * pi_x.min(pi_y);
    let b = 4.0 / eps;
    let indicative = matches!(profile, ProfileFn::Tabulated(p) if !p.exact);
    if b <= a {
        return Ok(MorrisPeres { n: 1, bound: 1.0, indicative });
    }
    let integral = match profile {
        ProfileFn::PowerLaw { c, kappa } => {
            if *c <= 0.0 {
                return Err(RcmError::InvalidArgument("profile constant must be positive".into()));
            }
            if *kappa == 0.0 {
                4.0 / (c * c) * (b / a).ln()
            } else {
                4.0 / (c * c * 2.0 * kappa) * (b.powf(2.0 * kappa) - a.powf(2.0 * kappa))
            }
        }
        ProfileFn::Tabulated(p) => p.integral(a, b)?,
    };
    let ratio = (1.0 - gamma) * (1.0 - gamma) / (gamma * gamma);
    let bound = 1.0 + ratio * integral;
    let near = bound.round();
    let n = if (bound - near).abs() <= 1e-9 * bound { near } else { bound.ceil() };
    Ok(MorrisPeres { n: n as u64, bound, indicative })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> ChainView<f64> {
        // π = (1, 2), Q(a, b) = 1/2.
        ChainView::from_rows(
            vec![0, 1],
            vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 0.25), (1, 0.75)]],
            vec![1.0, 2.0],
        )
        .unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let p = ProfileFn::PowerLaw { c: 1.0, kappa: 0.5 };
        assert_eq!(morris_peres_n(&p, 0.5, 0.01, 1.0, 1.0).unwrap().n, 1585);
        assert_eq!(morris_peres_n(&p, 0.5, 4.0, 1.0, 1.0).unwrap().n, 1);
        assert!(morris_peres_n(&p, 0.6, 0.01, 1.0, 1.0).is_err());
        let d = 3.0;
        let q = ProfileFn::PowerLaw { c: 0.7, kappa: 1.0 / d };
        let n1 = morris_peres_n(&q, 0.5, 1e-2, 1.0, 1.0).unwrap().bound - 1.0;
        let n2 = morris_peres_n(&q, 0.5, 1e-3, 1.0, 1.0).unwrap().bound - 1.0;
        let want = (2.0 * d / 0.49) * ((4e3f64).powf(2.0 / d) - 4f64.powf(2.0 / d));
        assert!((n2 - want).abs() < 1e-9 * want);
        assert!(n2 / n1 > 1.0);
    }

    #[test]
    fn tabulated_power_law_is_conservative() {
        let grid: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let r = 4.0 * 1.05f64.powi(i);
                (r, r.powf(-0.5))
            })
            .collect();
        let p = ProfileEstimate::from_grid(grid, true).unwrap();
        let exact = morris_peres_n(&ProfileFn::PowerLaw { c: 1.0, kappa: 0.5 }, 0.5, 0.01, 1.0, 1.0).unwrap();
        let tab = morris_peres_n(&ProfileFn::Tabulated(p), 0.5, 0.01, 1.0, 1.0).unwrap();
        assert!(tab.n >= exact.n);
        assert!((tab.n as f64) < 1.1 * exact.n as f64);
    }

    #[test]
    fn two_state_profile() {
        let c = two_state();
        let p = profile(&c, 1.5, ProfileMode::Exhaustive).unwrap();
        assert_eq!(p.points, vec![(1.0, 0.5)]);
        assert!(profile(&c, 0.5, ProfileMode::Exhaustive).is_err());
        let full = profile(&c, 3.0, ProfileMode::Exhaustive).unwrap();
        assert_eq!(full.value_at(3.0), Some(0.0));
    }

    #[test]
    fn heuristic_never_beats_exhaustive() {
        let lat_adj = |k: usize| -> ChainView<f64> {
            let n = k * k;
            let mut rows = vec![Vec::new(); n];
            let mut w = vec![0.0; n];
            for v in 0..n {
                let (i, j) = (v / k, v % k);
                let mut nb = Vec::new();
                if i > 0 { nb.push(v - k); }
                if i + 1 < k { nb.push(v + k); }
                if j > 0 { nb.push(v - 1); }
                if j + 1 < k { nb.push(v + 1); }
                w[v] = nb.len() as f64;
                rows[v] = nb.iter().map(|&u| (u, 1.0 / w[v])).collect();
            }
            ChainView::from_rows((0..n).collect(), rows, w).unwrap()
        };
        let c = lat_adj(4);
        let r_max = c.total_weight() / 2.0;
        let ex = profile(&c, r_max, ProfileMode::Exhaustive).unwrap();
        let he = profile(&c, r_max, ProfileMode::Grown { samples: 200, seed: 3 }).unwrap();
        assert!(ex.is_non_increasing() && he.is_non_increasing());
        for (r, phi) in &he.points {
            assert!(*phi >= ex.value_at(*r).unwrap() - 1e-15);
        }
        let mut buf = Vec::new();
        ex.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("r,phi,exact_flag\n"));
    }
}
