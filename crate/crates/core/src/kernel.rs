//! Quenched heat kernel `P_ω^n(x, ·)`: exact forward evolution, Monte Carlo
//! walkers, decay-exponent fits and the annealed average.
//!
//! Exact evolution works on a dense sub-box of radius `n` around the source
//! and, at step `k`, touches only the sites of the ℓ¹ ball of radius `k` with
//! the parity of `k`. Everything else is zero on a bipartite box.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{bond_open, components};
use crate::env::{sample_field, ConductanceLaw, Environment};
use crate::error::{RcmError, Result};
use crate::lattice::{Lattice, MAX_DIM};
use crate::rng::{derive_seed, walker_rng};
use crate::scalar::Scalar;
use crate::stats::{binomial, least_squares, mean_stderr};

/// Default ceiling on the working set of an exact evolution.
pub const DEFAULT_MEMORY_CAP: usize = 3 << 30;

/// Which walk is evolved.
#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    /// `P_ω`.
    Full,
    /// Walk on bonds with `ω ≥ α` only, normalised by `π̃(x) = Σ ω_xy 1{ω_xy ≥ α}`.
    Restricted(f64),
    /// `P_ω` killed on entering any of the listed sites (substochastic).
    Avoiding(Vec<Vec<i32>>),
}

impl Dynamics {
    fn alpha(&self) -> Option<f64> {
        match self {
            Dynamics::Restricted(a) => Some(*a),
            _ => None,
        }
    }

    #[inline]
    fn weight(&self, w: f64) -> f64 {
        match self {
            Dynamics::Restricted(a) if !bond_open(w, *a) => 0.0,
            _ => w,
        }
    }
}

/// `μ_n` on the sub-box around the source.
#[derive(Clone, Debug)]
pub struct SiteDistribution<S> {
    center: Vec<i32>,
    sub: Lattice,
    values: Vec<S>,
    steps: usize,
    flushed: u64,
    max_mass_deviation: f64,
}

impl<S: Scalar> SiteDistribution<S> {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn source(&self) -> &[i32] {
        &self.center
    }

    /// Mass at absolute coordinates `x` (zero outside the support).
    pub fn get(&self, x: &[i32]) -> S {
        let rel: Vec<i32> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        match self.sub.index(&rel) {
            Some(i) => self.values[i].clone(),
            None => S::zero(),
        }
    }

    pub fn total_mass(&self) -> S {
        self.values.iter().fold(S::zero(), |acc, v| acc + v.clone())
    }

    /// Non-zero entries as `(absolute coordinates, mass)`.
    pub fn nonzero(&self) -> Vec<(Vec<i32>, S)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(|(i, v)| {
                let x = self
                    .sub
                    .coords(i)
                    .iter()
                    .zip(&self.center)
                    .map(|(u, c)| u + c)
                    .collect();
                (x, v.clone())
            })
            .collect()
    }

    /// Number of entries flushed to zero for being below `1e-300`.
    pub fn flushed(&self) -> u64 {
        self.flushed
    }

    /// Largest `|Σ μ_k − 1|` seen over the steps (full and restricted walks).
    pub fn max_mass_deviation(&self) -> f64 {
        self.max_mass_deviation
    }
}

/// Forward evolution state.
struct Propagator<'a, E: ?Sized, S> {
    field: &'a E,
    dynamics: Dynamics,
    sub: Lattice,
    center: Vec<i32>,
    center_global: usize,
    global_strides: Vec<usize>,
    inv_pi: Vec<S>,
    cur: Vec<S>,
    next: Vec<S>,
    killed: Vec<usize>,
    step: usize,
    flushed: u64,
    conservative: bool,
    max_dev: f64,
}

impl<'a, E: Environment + ?Sized, S: Scalar> Propagator<'a, E, S> {
    fn new(field: &'a E, source: &[i32], n: usize, dynamics: Dynamics, cap: usize) -> Result<Self> {
        let lat = field.lattice();
        let src = lat.index_or_err(source)?;
        if (lat.boundary_distance(src) as usize) < n {
            return Err(RcmError::BoxTooSmall {
                radius: lat.radius(),
                steps: n,
                start: source.to_vec(),
            });
        }
        let r = n.max(1) as u32;
        let sub = Lattice::new(lat.dim(), r)?;
        let needed = sub.site_count().saturating_mul(3 * std::mem::size_of::<S>());
        if needed > cap {
            return Err(RcmError::MemoryCap { needed, cap });
        }
        let global_strides: Vec<usize> = (0..lat.dim()).map(|a| lat.stride(a)).collect();
        let mut p = Self {
            field,
            dynamics,
            center: source.to_vec(),
            center_global: src,
            global_strides,
            inv_pi: Vec::new(),
            cur: vec![S::zero(); sub.site_count()],
            next: vec![S::zero(); sub.site_count()],
            sub,
            killed: Vec::new(),
            step: 0,
            flushed: 0,
            conservative: true,
            max_dev: 0.0,
        };
        if p.pi_at(src) <= 0.0 {
            return Err(RcmError::IsolatedSite(source.to_vec()));
        }
        p.inv_pi = p.compute_inv_pi();
        if let Dynamics::Avoiding(sites) = &p.dynamics {
            p.conservative = false;
            let sites = sites.clone();
            for x in sites {
                let rel: Vec<i32> = x.iter().zip(&p.center).map(|(a, c)| a - c).collect();
                if let Some(i) = p.sub.index(&rel) {
                    p.killed.push(i);
                }
            }
        }
        let o = p.sub.origin();
        p.cur[o] = S::one();
        Ok(p)
    }

    fn pi_at(&self, g: usize) -> f64 {
        let d = self.sub.dim();
        (0..d)
            .map(|a| {
                self.dynamics.weight(self.field.bond(g, a, false))
                    + self.dynamics.weight(self.field.bond(g, a, true))
            })
            .sum()
    }

    #[inline]
    fn global(&self, coords: &[i32]) -> usize {
        let mut g = self.center_global as isize;
        for (c, s) in coords.iter().zip(&self.global_strides) {
            g += *c as isize * *s as isize;
        }
        g as usize
    }

    fn compute_inv_pi(&self) -> Vec<S> {
        let side = self.sub.side();
        let mut out = vec![S::zero(); self.sub.site_count()];
        out.par_chunks_mut(side).enumerate().for_each(|(row, chunk)| {
            let mut u = [0i32; MAX_DIM];
            self.sub.coords_into(row * side, &mut u);
            for (i, slot) in chunk.iter_mut().enumerate() {
                u[0] = i as i32 - self.sub.radius() as i32;
                let g = self.global(&u[..self.sub.dim()]);
                let mut pi = S::zero();
                for a in 0..self.sub.dim() {
                    for up in [false, true] {
                        let w = self.dynamics.weight(self.field.bond(g, a, up));
                        if w > 0.0 {
                            pi = pi + S::from_f64_value(w);
                        }
                    }
                }
                if !pi.is_zero() {
                    *slot = S::one() / pi;
                }
            }
        });
        out
    }

    /// Advances one step; returns the new total mass.
    fn step(&mut self) -> S {
        let k = (self.step + 1) as i64;
        let d = self.sub.dim();
        let r = self.sub.radius() as i64;
        let side = self.sub.side();
        let mut next = std::mem::take(&mut self.next);
        let this = &*self;
        let cur = &this.cur;
        let rows: Vec<(S, u64)> = next
            .par_chunks_mut(side)
            .enumerate()
            .map(|(row, chunk)| {
                let mut u = [0i32; MAX_DIM];
                this.sub.coords_into(row * side, &mut u);
                let partial: i64 = u[1..d].iter().map(|c| (*c as i64).abs()).sum();
                let mut mass = S::zero();
                let mut flushed = 0u64;
                if partial > k {
                    return (mass, flushed);
                }
                let span = k - partial;
                let mut x0 = -span;
                while x0 <= span {
                    u[0] = x0 as i32;
                    let local = (x0 + r) as usize;
                    let sidx = row * side + local;
                    let g = this.global(&u[..d]);
                    let mut acc = S::zero();
                    for axis in 0..d {
                        let stride = this.sub.stride(axis);
                        let c = u[axis] as i64;
                        for up in [false, true] {
                            let inside = if up { c < r } else { c > -r };
                            if !inside {
                                continue;
                            }
                            let nb = if up { sidx + stride } else { sidx - stride };
                            if cur[nb].is_zero() {
                                continue;
                            }
                            let w = this.dynamics.weight(this.field.bond(g, axis, up));
                            if w > 0.0 {
                                acc = acc + cur[nb].clone() * this.inv_pi[nb].clone() * S::from_f64_value(w);
                            }
                        }
                    }
                    if acc.flush_tiny() {
                        flushed += 1;
                    }
                    mass = mass + acc.clone();
                    chunk[local] = acc;
                    x0 += 2;
                }
                (mass, flushed)
            })
            .collect();
        let mut mass = S::zero();
        for (m, f) in rows {
            mass = mass + m;
            self.flushed += f;
        }
        for &i in &self.killed {
            mass = mass - next[i].clone();
            next[i] = S::zero();
        }
        // The buffer that held μ_{k-1} becomes the all-zero scratch for k+1.
        self.next = std::mem::replace(&mut self.cur, next);
        self.clear_parity(self.step as i64);
        self.step += 1;
        if self.conservative {
            let dev = (mass.as_f64() - 1.0).abs();
            if dev > self.max_dev {
                self.max_dev = dev;
            }
        }
        mass
    }

    /// Zeroes the scratch buffer, which holds `μ_{k-1}` on the ball of radius `k-1`.
    fn clear_parity(&mut self, prev: i64) {
        let d = self.sub.dim();
        let r = self.sub.radius() as i64;
        let side = self.sub.side();
        let sub = &self.sub;
        self.next.par_chunks_mut(side).enumerate().for_each(|(row, chunk)| {
            let mut u = [0i32; MAX_DIM];
            sub.coords_into(row * side, &mut u);
            let partial: i64 = u[1..d].iter().map(|c| (*c as i64).abs()).sum();
            if partial > prev {
                return;
            }
            let span = prev - partial;
            for x0 in -span..=span {
                chunk[(x0 + r) as usize] = S::zero();
            }
        });
    }

    fn at_source(&self) -> S {
        self.cur[self.sub.origin()].clone()
    }

    fn finish(self) -> SiteDistribution<S> {
        SiteDistribution {
            center: self.center,
            sub: self.sub,
            values: self.cur,
            steps: self.step,
            flushed: self.flushed,
            max_mass_deviation: self.max_dev,
        }
    }
}

/// Exact `μ_n = δ_source P^n` under the given dynamics.
pub fn evolve<E, S>(field: &E, source: &[i32], n: usize, dynamics: Dynamics) -> Result<SiteDistribution<S>>
where
    E: Environment + ?Sized,
    S: Scalar,
{
    evolve_with_cap(field, source, n, dynamics, DEFAULT_MEMORY_CAP)
}

pub fn evolve_with_cap<E, S>(
    field: &E,
    source: &[i32],
    n: usize,
    dynamics: Dynamics,
    cap: usize,
) -> Result<SiteDistribution<S>>
where
    E: Environment + ?Sized,
    S: Scalar,
{
    let mut p = Propagator::<E, S>::new(field, source, n, dynamics, cap)?;
    for _ in 0..n {
        p.step();
    }
    Ok(p.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Mc,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Mc => "mc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub n: usize,
    pub value: f64,
    /// Zero for exact values.
    pub stderr: f64,
}

/// Environment the series was computed in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub d: usize,
    pub radius: u32,
    pub alpha: Option<f64>,
    pub law_id: String,
    pub seed: u64,
}

/// `n ↦ P^n(x, x)` at a list of times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSeries {
    pub origin: Vec<i32>,
    pub points: Vec<SeriesPoint>,
    pub method: Method,
    pub meta: SeriesMeta,
    pub max_mass_deviation: f64,
    pub flushed: u64,
}

impl KernelSeries {
    pub fn value_at(&self, n: usize) -> Option<f64> {
        self.points.iter().find(|p| p.n == n).map(|p| p.value)
    }

    /// First even time at which the series increases by more than `slack`,
    /// as `(n, previous value, value)`.
    pub fn monotonicity_violation(&self, slack: f64) -> Option<(usize, f64, f64)> {
        let mut prev: Option<f64> = None;
        for p in self.points.iter().filter(|p| p.n % 2 == 0) {
            if let Some(q) = prev {
                if p.value > q + slack {
                    return Some((p.n, q, p.value));
                }
            }
            prev = Some(p.value);
        }
        None
    }

    /// Writes `n,value,stderr,method,d,L,alpha,law_id,seed` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "value", "stderr", "method", "d", "L", "alpha", "law_id", "seed"])?;
        let alpha = self.meta.alpha.map_or(String::new(), |a| a.to_string());
        for p in &self.points {
            w.write_record([
                p.n.to_string(),
                format!("{:e}", p.value),
                format!("{:e}", p.stderr),
                self.method.as_str().to_string(),
                self.meta.d.to_string(),
                self.meta.radius.to_string(),
                alpha.clone(),
                self.meta.law_id.clone(),
                self.meta.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Two whitespace-separated columns `ln n  ln value`, positive values only.
    pub fn write_plot<W: Write>(&self, mut out: W) -> Result<()> {
        for p in self.points.iter().filter(|p| p.value > 0.0 && p.n > 0) {
            writeln!(out, "{:.12e} {:.12e}", (p.n as f64).ln(), p.value.ln())?;
        }
        Ok(())
    }
}

fn meta_of<E: Environment + ?Sized>(field: &E, alpha: Option<f64>) -> SeriesMeta {
    let lat = field.lattice();
    SeriesMeta {
        d: lat.dim(),
        radius: lat.radius(),
        alpha,
        law_id: field.law_label(),
        seed: field.field_seed(),
    }
}

/// Exact `P^n(source, source)` for `n = stride, 2·stride, …, ≤ n_max`, in the
/// scalar `S`. Fails if the even-step subsequence increases by more than
/// `1e-12`.
pub fn return_series_in<E, S>(
    field: &E,
    source: &[i32],
    n_max: usize,
    stride: usize,
    dynamics: Dynamics,
) -> Result<(KernelSeries, Vec<S>)>
where
    E: Environment + ?Sized,
    S: Scalar,
{
    if stride == 0 {
        return Err(RcmError::InvalidArgument("stride must be positive".into()));
    }
    let alpha = dynamics.alpha();
    let mut p = Propagator::<E, S>::new(field, source, n_max, dynamics, DEFAULT_MEMORY_CAP)?;
    let mut points = Vec::new();
    let mut exact = Vec::new();
    for k in 1..=n_max {
        p.step();
        if k % stride == 0 {
            let v = p.at_source();
            points.push(SeriesPoint { n: k, value: v.as_f64(), stderr: 0.0 });
            exact.push(v);
        }
    }
    let series = KernelSeries {
        origin: source.to_vec(),
        points,
        method: Method::Exact,
        meta: meta_of(field, alpha),
        max_mass_deviation: p.max_dev,
        flushed: p.flushed,
    };
    if let Some((n, prev, value)) = series.monotonicity_violation(1e-12) {
        return Err(RcmError::Monotonicity { n, prev, value });
    }
    Ok((series, exact))
}

/// [`return_series_in`] for the full walk in `f64`.
pub fn return_series<E: Environment + ?Sized>(
    field: &E,
    source: &[i32],
    n_max: usize,
    stride: usize,
) -> Result<KernelSeries> {
    Ok(return_series_in::<E, f64>(field, source, n_max, stride, Dynamics::Full)?.0)
}

/// One step of the walk from `site`, choosing a neighbour with probability
/// `ω_xy / π(x)`.
#[inline]
pub fn sample_step<E: Environment + ?Sized, R: Rng>(field: &E, site: usize, rng: &mut R) -> Option<usize> {
    let lat = field.lattice();
    let d = lat.dim();
    let mut w = [0.0f64; 2 * MAX_DIM];
    let mut total = 0.0;
    for axis in 0..d {
        for (j, up) in [false, true].into_iter().enumerate() {
            let v = field.bond(site, axis, up);
            w[2 * axis + j] = v;
            total += v;
        }
    }
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.gen::<f64>() * total;
    let mut last = None;
    for (i, &v) in w[..2 * d].iter().enumerate() {
        if v <= 0.0 {
            continue;
        }
        last = Some(i);
        if u < v {
            break;
        }
        u -= v;
    }
    let i = last.expect("positive total has a positive entry");
    lat.neighbor(site, i / 2, i % 2 == 1)
}

/// Fraction of `walkers` independent walks with `X_n = source`, and its
/// binomial standard error. Walker `i` uses substream `i` of `seed`.
pub fn mc_return<E: Environment + ?Sized>(
    field: &E,
    source: &[i32],
    n: usize,
    walkers: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if walkers == 0 {
        return Err(RcmError::InvalidArgument("walkers must be at least 1".into()));
    }
    let lat = field.lattice();
    let start = lat.index_or_err(source)?;
    if field.pi(start) <= 0.0 {
        return Err(RcmError::IsolatedSite(source.to_vec()));
    }
    let hits: u64 = (0..walkers)
        .into_par_iter()
        .map(|i| {
            let mut rng = walker_rng(seed, i);
            let mut x = start;
            for _ in 0..n {
                x = sample_step(field, x, &mut rng).expect("walk never reaches an isolated site");
            }
            u64::from(x == start)
        })
        .sum();
    Ok(binomial(hits, walkers))
}

/// Least-squares fit of `ln v = c − a ln n + b ln ln n` (`b = 0` unless
/// `with_log`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Decay exponent `a`.
    pub exponent: f64,
    /// Coefficient `b` of `ln ln n`.
    pub log_coefficient: f64,
    /// `e^c`.
    pub prefactor: f64,
    pub range: (usize, usize),
    pub points: usize,
    pub residual: f64,
}

pub fn fit_decay(series: &KernelSeries, range: (usize, usize), with_log: bool) -> Result<DecayFit> {
    let pts: Vec<&SeriesPoint> = series
        .points
        .iter()
        .filter(|p| p.n >= range.0 && p.n <= range.1)
        .collect();
    if let Some(p) = pts.iter().find(|p| p.value <= 0.0 || !p.value.is_finite()) {
        return Err(RcmError::NonPositive { n: p.n, value: p.value });
    }
    if pts.len() < 4 {
        return Err(RcmError::TooFewPoints { needed: 4, got: pts.len() });
    }
    if with_log && pts.iter().any(|p| p.n < 2) {
        return Err(RcmError::InvalidArgument("log correction needs n ≥ 2".into()));
    }
    let ln_n: Vec<f64> = pts.iter().map(|p| (p.n as f64).ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.value.ln()).collect();
    let mut cols = vec![vec![1.0; pts.len()], ln_n.clone()];
    if with_log {
        cols.push(ln_n.iter().map(|l| l.ln()).collect());
    }
    let (beta, residual) = least_squares(&cols, &y)?;
    Ok(DecayFit {
        exponent: -beta[1],
        log_coefficient: if with_log { beta[2] } else { 0.0 },
        prefactor: beta[0].exp(),
        range,
        points: pts.len(),
        residual,
    })
}

/// Exact return probability of simple random walk on `Z^d` after `steps`
/// steps: `(2d)^{-2m} Σ_{j_1+…+j_d=m} (2m)! / ∏ j_i!²` for `steps = 2m`.
pub fn homogeneous_return_probability(d: usize, steps: usize) -> f64 {
    if steps % 2 == 1 {
        return 0.0;
    }
    let m = steps / 2;
    let ln_fact: Vec<f64> = {
        let mut v = vec![0.0; steps + 1];
        for i in 1..=steps {
            v[i] = v[i - 1] + (i as f64).ln();
        }
        v
    };
    // g[s] = ln Σ_{j_1+…+j_k=s} ∏ 1/j_i!², built one coordinate at a time.
    let mut g: Vec<f64> = (0..=m).map(|s| -2.0 * ln_fact[s]).collect();
    for _ in 1..d {
        let mut h = vec![f64::NEG_INFINITY; m + 1];
        for (s, slot) in h.iter_mut().enumerate() {
            let terms: Vec<f64> = (0..=s).map(|j| g[s - j] - 2.0 * ln_fact[j]).collect();
            let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            *slot = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
        }
        g = h;
    }
    (ln_fact[steps] + g[m] - steps as f64 * ((2 * d) as f64).ln()).exp()
}

/// Ensemble average of exact `P^n(0,0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealedEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub accepted: usize,
    pub rejected: usize,
}

/// `E[P_ω^n(0,0) | 0 ∈ largest cluster]` over `ensemble` fields sampled from
/// seeds derived from `seed`. Fields where the origin misses the largest
/// positive-conductance component are resampled; more than 99% rejections is
/// an error.
pub fn annealed_return(
    law: &ConductanceLaw,
    d: usize,
    radius: u32,
    n: usize,
    ensemble: usize,
    seed: u64,
) -> Result<AnnealedEstimate> {
    if ensemble < 2 {
        return Err(RcmError::InvalidArgument("ensemble needs at least 2 fields".into()));
    }
    let max_attempts = 100 * ensemble;
    let mut values = Vec::with_capacity(ensemble);
    let mut rejected = 0usize;
    let mut attempt = 0u64;
    while values.len() < ensemble {
        if attempt as usize >= max_attempts {
            return Err(RcmError::RejectionRate {
                rate: rejected as f64 / attempt as f64,
            });
        }
        let field = sample_field(d, radius, law, derive_seed(seed, attempt))?;
        attempt += 1;
        let o = field.lattice().origin();
        let lab = components(&field, 0.0);
        if !lab.in_largest(o) {
            rejected += 1;
            continue;
        }
        let mu: SiteDistribution<f64> = evolve(&field, &vec![0; d], n, Dynamics::Full)?;
        values.push(mu.get(&vec![0; d]));
    }
    let est = mean_stderr(&values);
    Ok(AnnealedEstimate {
        mean: est.mean,
        stderr: est.stderr,
        accepted: values.len(),
        rejected,
    })
}
