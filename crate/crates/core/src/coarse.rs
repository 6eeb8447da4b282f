//! The walk watched only on the strong component: exact rows of `P̂_ω`,
//! re-wired conductances `ω̂`, hiding times and their census.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{weak_component, ClusterLabeling, WeakComponent};
use crate::env::Environment;
use crate::error::{RcmError, Result};
use crate::kernel::sample_step;
use crate::rng::{derive_seed, walker_rng};
use crate::scalar::Scalar;
use crate::stats::{binomial, mean_stderr, MeanEstimate};

/// Largest interior solved by dense elimination (always used for exact scalars).
pub const DIRECT_LIMIT: usize = 100;
/// Largest interior solved by conjugate gradients; beyond it rows are estimated.
pub const ITERATIVE_LIMIT: usize = 10_000;
const CG_TOLERANCE: f64 = 1e-12;
/// Largest weak component solved by elimination when conjugate gradients stall.
const DIRECT_FALLBACK_LIMIT: usize = 2_000;
const MC_ROW_WALKERS: u64 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// No weak neighbours: the row is the plain transition row.
    Trivial,
    Direct,
    Iterative,
    /// Estimated by simulation; not exact.
    MonteCarlo,
}

/// Row `P̂_ω(x, ·)` of the coarse-grained chain.
#[derive(Clone, Debug, PartialEq)]
pub struct HatChain<S> {
    pub anchor: usize,
    pub coords: Vec<i32>,
    /// `(strong site, P̂(x, y))`, sorted by site.
    pub row: Vec<(usize, S)>,
    pub pi: S,
    /// `E_x T_1`.
    pub expected_hiding_time: S,
    pub component_size: usize,
    pub method: SolveMethod,
}

impl<S: Scalar> HatChain<S> {
    pub fn prob(&self, y: usize) -> S {
        match self.row.binary_search_by_key(&y, |(s, _)| *s) {
            Ok(i) => self.row[i].1.clone(),
            Err(_) => S::zero(),
        }
    }

    /// `ω̂_xy = π(x) P̂(x, y)`.
    pub fn rewired(&self, y: usize) -> S {
        self.pi.clone() * self.prob(y)
    }

    pub fn row_sum(&self) -> S {
        self.row.iter().fold(S::zero(), |a, (_, p)| a + p.clone())
    }

    /// `(4d/α)|G_x|`.
    pub fn hiding_bound(&self, d: usize, alpha: f64) -> f64 {
        4.0 * d as f64 / alpha * self.component_size as f64
    }

    pub fn row_entropy(&self) -> f64 {
        self.row
            .iter()
            .map(|(_, p)| p.as_f64())
            .filter(|p| *p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }
}

/// Sparse transition data of the weak interior `W` of `G_x`.
struct Absorbing<S> {
    /// `q[i]`: `(j, P(w_i, w_j))` for interior neighbours.
    q: Vec<Vec<(usize, S)>>,
    /// `r[i]`: `(target column, P(w_i, strong))`.
    r: Vec<Vec<(usize, S)>>,
}

fn transition<E: Environment + ?Sized, S: Scalar>(field: &E, site: usize) -> Vec<(usize, S)> {
    let nbs = field.open_neighbors(site);
    let pi = nbs.iter().fold(S::zero(), |a, (_, w)| a + S::from_f64_value(*w));
    nbs.into_iter()
        .map(|(y, w)| (y, S::from_f64_value(w) / pi.clone()))
        .collect()
}

fn build_absorbing<E: Environment + ?Sized, S: Scalar>(
    field: &E,
    interior: &[usize],
    targets: &HashMap<usize, usize>,
) -> Absorbing<S> {
    let pos: HashMap<usize, usize> = interior.iter().enumerate().map(|(i, &w)| (w, i)).collect();
    let mut q = Vec::with_capacity(interior.len());
    let mut r = Vec::with_capacity(interior.len());
    for &w in interior {
        let mut qi = Vec::new();
        let mut ri = Vec::new();
        for (v, p) in transition::<E, S>(field, w) {
            if let Some(&j) = pos.get(&v) {
                qi.push((j, p));
            } else {
                ri.push((targets[&v], p));
            }
        }
        q.push(qi);
        r.push(ri);
    }
    Absorbing { q, r }
}

/// Solves `(I − Q) X = [R | 1]` by elimination in the order of the interior.
/// Columns `0..m` are hitting probabilities, column `m` expected times.
///
/// Each pivot is the total exit mass of its (reduced) row, summed from
/// nonnegative terms, rather than `1 − q_ii`. Nearly closed weak rows then keep
/// full relative precision.
fn solve_direct<S: Scalar>(a: &Absorbing<S>, m: usize, coords: &[i32]) -> Result<Vec<Vec<S>>> {
    let k = a.q.len();
    let mut q = vec![vec![S::zero(); k]; k];
    let mut b = vec![vec![S::zero(); m + 1]; k];
    for i in 0..k {
        for (j, p) in &a.q[i] {
            q[i][*j] = q[i][*j].clone() + p.clone();
        }
        for (c, p) in &a.r[i] {
            b[i][*c] = b[i][*c].clone() + p.clone();
        }
        b[i][m] = S::one();
    }
    let mut pivot = vec![S::zero(); k];
    for col in 0..k {
        let exit = q[col][col + 1..]
            .iter()
            .chain(&b[col][..m])
            .fold(S::zero(), |acc, v| acc + v.clone());
        if exit.is_zero() {
            return Err(RcmError::StrandedWeakComponent(coords.to_vec()));
        }
        let (done, rest) = q.split_at_mut(col + 1);
        let (bdone, brest) = b.split_at_mut(col + 1);
        let (prow, pb) = (&done[col], &bdone[col]);
        for (row, (qr, br)) in rest.iter_mut().zip(brest.iter_mut()).enumerate() {
            let row = row + col + 1;
            if qr[col].is_zero() {
                continue;
            }
            let f = qr[col].clone() / exit.clone();
            qr[col] = S::zero();
            for j in col + 1..k {
                if j != row && !prow[j].is_zero() {
                    qr[j] = qr[j].clone() + f.clone() * prow[j].clone();
                }
            }
            for c in 0..=m {
                if !pb[c].is_zero() {
                    br[c] = br[c].clone() + f.clone() * pb[c].clone();
                }
            }
        }
        pivot[col] = exit;
    }
    let mut x = vec![vec![S::zero(); m + 1]; k];
    for col in (0..k).rev() {
        for c in 0..=m {
            let mut v = b[col][c].clone();
            for j in col + 1..k {
                if !q[col][j].is_zero() {
                    v = v + q[col][j].clone() * x[j][c].clone();
                }
            }
            x[col][c] = v / pivot[col].clone();
        }
    }
    Ok(x)
}

/// Jacobi-preconditioned conjugate gradients on the symmetric form `π_w x_w − Σ_v ω_wv x_v = b_w`
/// of the absorbing system, one right-hand side per column.
fn solve_iterative<E: Environment + ?Sized>(
    field: &E,
    interior: &[usize],
    targets: &HashMap<usize, usize>,
) -> Result<Vec<Vec<f64>>> {
    let k = interior.len();
    let m = targets.len();
    let pos: HashMap<usize, usize> = interior.iter().enumerate().map(|(i, &w)| (w, i)).collect();
    let mut diag = vec![0.0; k];
    let mut off: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    let mut rhs = vec![vec![0.0; k]; m + 1];
    for (i, &w) in interior.iter().enumerate() {
        for (v, c) in field.open_neighbors(w) {
            diag[i] += c;
            match pos.get(&v) {
                Some(&j) => off[i].push((j, c)),
                None => rhs[targets[&v]][i] += c,
            }
        }
        rhs[m][i] = diag[i];
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        for i in 0..k {
            out[i] = diag[i] * x[i] - off[i].iter().map(|(j, c)| c * x[*j]).sum::<f64>();
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let max_iter = 20 * k + 1000;
    let columns: Vec<Vec<f64>> = rhs
        .par_iter()
        .map(|b| {
            let mut x = vec![0.0; k];
            let bnorm = dot(b, b).sqrt();
            if bnorm == 0.0 {
                return Ok(x);
            }
            let mut r = b.clone();
            let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
            let mut p = z.clone();
            let mut ap = vec![0.0; k];
            let mut rz = dot(&r, &z);
            for _ in 0..max_iter {
                if dot(&r, &r).sqrt() <= CG_TOLERANCE * bnorm {
                    return Ok(x);
                }
                apply(&p, &mut ap);
                let a = rz / dot(&p, &ap);
                for i in 0..k {
                    x[i] += a * p[i];
                    r[i] -= a * ap[i];
                    z[i] = r[i] / diag[i];
                }
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                for i in 0..k {
                    p[i] = z[i] + beta * p[i];
                }
                rz = rz_new;
            }
            Err(RcmError::NoConvergence(max_iter))
        })
        .collect::<Result<_>>()?;
    Ok((0..k).map(|i| columns.iter().map(|c| c[i]).collect()).collect())
}

/// Computes `P̂(x, ·)` and `E_x T_1` for a strong site `x`.
pub fn hat_chain<E, S>(field: &E, strong: &ClusterLabeling, x: usize) -> Result<HatChain<S>>
where
    E: Environment + ?Sized,
    S: Scalar,
{
    let g = weak_component(field, strong, x)?;
    hat_chain_from(field, &g)
}

pub fn hat_chain_from<E, S>(field: &E, g: &WeakComponent) -> Result<HatChain<S>>
where
    E: Environment + ?Sized,
    S: Scalar,
{
    let x = g.anchor;
    let coords = field.lattice().coords(x);
    let step: Vec<(usize, S)> = transition(field, x);
    if step.is_empty() {
        return Err(RcmError::IsolatedSite(coords));
    }
    let pi = field
        .open_neighbors(x)
        .iter()
        .fold(S::zero(), |a, (_, w)| a + S::from_f64_value(*w));
    if g.interior.is_empty() {
        let mut row = step;
        row.sort_by_key(|(s, _)| *s);
        return Ok(HatChain {
            anchor: x,
            coords,
            row,
            pi,
            expected_hiding_time: S::one(),
            component_size: g.size(),
            method: SolveMethod::Trivial,
        });
    }
    let mut strong_targets: Vec<usize> = g.strong_boundary.clone();
    strong_targets.push(x);
    strong_targets.sort_unstable();
    let column: HashMap<usize, usize> =
        strong_targets.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let m = strong_targets.len();
    let interior_pos: HashMap<usize, usize> =
        g.interior.iter().enumerate().map(|(i, &w)| (w, i)).collect();

    let (solution, method): (Vec<Vec<S>>, SolveMethod) = if S::EXACT || g.interior.len() <= DIRECT_LIMIT {
        let a = build_absorbing::<E, S>(field, &g.interior, &column);
        (solve_direct(&a, m, &coords)?, SolveMethod::Direct)
    } else if g.interior.len() <= ITERATIVE_LIMIT {
        match solve_iterative(field, &g.interior, &column) {
            Ok(sol) => {
                let conv = sol
                    .into_iter()
                    .map(|r| r.into_iter().map(S::from_f64_value).collect())
                    .collect();
                (conv, SolveMethod::Iterative)
            }
            Err(RcmError::NoConvergence(iters)) if g.interior.len() <= DIRECT_FALLBACK_LIMIT => {
                log::warn!(
                    "conjugate gradients stalled after {iters} iterations at {:?}: solving directly",
                    coords
                );
                let a = build_absorbing::<E, S>(field, &g.interior, &column);
                (solve_direct(&a, m, &coords)?, SolveMethod::Direct)
            }
            Err(e) => return Err(e),
        }
    } else {
        log::warn!(
            "weak component of {} sites at {:?}: row estimated by simulation",
            g.interior.len(),
            coords
        );
        return mc_hat_row(field, g, pi, coords);
    };

    let mut acc: BTreeMap<usize, S> = BTreeMap::new();
    let mut hiding = S::one();
    for (y, p) in step {
        if let Some(&i) = interior_pos.get(&y) {
            for (c, h) in solution[i][..m].iter().enumerate() {
                if !h.is_zero() {
                    let e = acc.entry(strong_targets[c]).or_insert_with(S::zero);
                    *e = e.clone() + p.clone() * h.clone();
                }
            }
            hiding = hiding + p * solution[i][m].clone();
        } else {
            let e = acc.entry(y).or_insert_with(S::zero);
            *e = e.clone() + p;
        }
    }
    Ok(HatChain {
        anchor: x,
        coords,
        row: acc.into_iter().collect(),
        pi,
        expected_hiding_time: hiding,
        component_size: g.size(),
        method,
    })
}

fn mc_hat_row<E: Environment + ?Sized, S: Scalar>(
    field: &E,
    g: &WeakComponent,
    pi: S,
    coords: Vec<i32>,
) -> Result<HatChain<S>> {
    let x = g.anchor;
    let weak: std::collections::HashSet<usize> = g.interior.iter().copied().collect();
    let seed = derive_seed(field.field_seed(), x as u64);
    let results: Vec<(usize, u64)> = (0..MC_ROW_WALKERS)
        .into_par_iter()
        .map(|i| {
            let mut rng = walker_rng(seed, i);
            let mut pos = x;
            let mut t = 0u64;
            loop {
                pos = sample_step(field, pos, &mut rng).expect("no isolated sites on a path");
                t += 1;
                if !weak.contains(&pos) {
                    return (pos, t);
                }
            }
        })
        .collect();
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    let mut total_t = 0u64;
    for (y, t) in &results {
        *counts.entry(*y).or_insert(0) += 1;
        total_t += t;
    }
    let n = MC_ROW_WALKERS as f64;
    Ok(HatChain {
        anchor: x,
        coords,
        row: counts
            .into_iter()
            .map(|(y, c)| (y, S::from_f64_value(c as f64 / n)))
            .collect(),
        pi,
        expected_hiding_time: S::from_f64_value(total_t as f64 / n),
        component_size: g.size(),
        method: SolveMethod::MonteCarlo,
    })
}

/// Rows for many anchors, in parallel.
pub fn hat_chains<E, S>(field: &E, strong: &ClusterLabeling, anchors: &[usize]) -> Vec<Result<HatChain<S>>>
where
    E: Environment + ?Sized,
    S: Scalar,
{
    anchors.par_iter().map(|&x| hat_chain(field, strong, x)).collect()
}

/// Largest `|ω̂_xy − ω̂_yx|` over all pairs in `rows` where both rows are
/// present, and the largest `|Σ_y P̂(x,y) − 1|`.
pub fn symmetry_and_row_residuals(rows: &[HatChain<f64>]) -> (f64, f64) {
    let by_site: HashMap<usize, &HatChain<f64>> = rows.iter().map(|r| (r.anchor, r)).collect();
    let mut sym: f64 = 0.0;
    let mut sum: f64 = 0.0;
    for r in rows {
        sum = sum.max((r.row_sum() - 1.0).abs());
        for (y, _) in &r.row {
            if let Some(other) = by_site.get(y) {
                sym = sym.max((r.rewired(*y) - other.rewired(r.anchor)).abs());
            }
        }
    }
    (sym, sum)
}

/// `ℓ`-step distribution of `X̂` from `source`, building rows on demand.
pub fn hat_power<E: Environment + ?Sized>(
    field: &E,
    strong: &ClusterLabeling,
    source: usize,
    steps: usize,
) -> Result<BTreeMap<usize, f64>> {
    let mut rows: HashMap<usize, HatChain<f64>> = HashMap::new();
    let mut mu = BTreeMap::from([(source, 1.0)]);
    for _ in 0..steps {
        let mut next = BTreeMap::new();
        for (&x, &m) in &mu {
            if !rows.contains_key(&x) {
                rows.insert(x, hat_chain(field, strong, x)?);
            }
            for (y, p) in &rows[&x].row {
                *next.entry(*y).or_insert(0.0) += m * p;
            }
        }
        mu = next;
    }
    Ok(mu)
}

/// `P(X̂_ℓ = 0, T_1 + … + T_ℓ ≥ n)` estimated from `walkers` full walks.
pub fn mc_coarse_return<E: Environment + ?Sized>(
    field: &E,
    strong: &ClusterLabeling,
    source: usize,
    ell: usize,
    n: u64,
    walkers: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if !strong.in_largest(source) {
        return Err(RcmError::NotStrong(field.lattice().coords(source)));
    }
    if walkers == 0 {
        return Err(RcmError::InvalidArgument("walkers must be at least 1".into()));
    }
    let hits: u64 = (0..walkers)
        .into_par_iter()
        .map(|i| {
            let mut rng = walker_rng(seed, i);
            let mut pos = source;
            let mut t = 0u64;
            let mut visits = 0usize;
            while visits < ell {
                pos = sample_step(field, pos, &mut rng).expect("strong sites are not isolated");
                t += 1;
                if strong.in_largest(pos) {
                    visits += 1;
                }
            }
            u64::from(pos == source && t >= n)
        })
        .sum();
    Ok(binomial(hits, walkers))
}

/// One row of the hiding-time census.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub x: Vec<i32>,
    pub size: usize,
    pub expected_hiding_time: f64,
    pub bound: f64,
    pub row_entropy: f64,
    pub method: SolveMethod,
}

impl CensusRow {
    pub fn bound_holds(&self) -> bool {
        self.expected_hiding_time <= self.bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HidingCensus {
    pub alpha: f64,
    pub rows: Vec<CensusRow>,
    pub mean_size: f64,
    pub stderr_size: f64,
}

impl HidingCensus {
    /// Rows where `E T_1 > (4d/α)|G_x|`.
    pub fn violations(&self) -> Vec<&CensusRow> {
        self.rows.iter().filter(|r| !r.bound_holds()).collect()
    }

    pub fn size_estimate(&self) -> MeanEstimate {
        MeanEstimate { mean: self.mean_size, stderr: self.stderr_size, count: self.rows.len() }
    }

    /// Writes `x,size_Gx,ET1,bound,row_entropy`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "size_Gx", "ET1", "bound", "row_entropy"])?;
        for r in &self.rows {
            w.write_record([
                format_site(&r.x),
                r.size.to_string(),
                r.expected_hiding_time.to_string(),
                r.bound.to_string(),
                r.row_entropy.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(a b c)`-style site label used in output files.
pub fn format_site(x: &[i32]) -> String {
    let parts: Vec<String> = x.iter().map(|c| c.to_string()).collect();
    format!("({})", parts.join(" "))
}

/// Writes `x,y,prob` triples for the given rows.
pub fn write_rows_csv<W: Write, E: Environment + ?Sized>(field: &E, rows: &[HatChain<f64>], out: W) -> Result<()> {
    let lat = field.lattice();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "prob"])?;
    for r in rows {
        for (y, p) in &r.row {
            w.write_record([format_site(&r.coords), format_site(&lat.coords(*y)), p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Exact `E T_1` and `|G_x|` at each strong site of `sites`.
pub fn hiding_time_census<E: Environment + ?Sized>(
    field: &E,
    strong: &ClusterLabeling,
    sites: &[usize],
) -> Result<HidingCensus> {
    let d = field.lattice().dim();
    let alpha = strong.alpha();
    let rows: Vec<HatChain<f64>> = hat_chains(field, strong, sites).into_iter().collect::<Result<_>>()?;
    let rows: Vec<CensusRow> = rows
        .into_iter()
        .map(|h| CensusRow {
            bound: h.hiding_bound(d, alpha),
            row_entropy: h.row_entropy(),
            size: h.component_size,
            expected_hiding_time: h.expected_hiding_time,
            method: h.method,
            x: h.coords,
        })
        .collect();
    let sizes: Vec<f64> = rows.iter().map(|r| r.size as f64).collect();
    let est = mean_stderr(&sizes);
    Ok(HidingCensus {
        alpha,
        rows,
        mean_size: est.mean,
        stderr_size: est.stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::components;
    use crate::env::{sample_field, ConductanceField, ConductanceLaw};
    use crate::scalar::Exact;

    fn dangling() -> ConductanceField {
        // Site w = (0,1) hangs off the origin by a bond of 0.1; origin has
        // three unit bonds, so π(0) = 3.1.
        ConductanceField::from_fn(2, 3, |x, axis| {
            if axis == 1 && x == [0, 0] {
                return 0.1;
            }
            if (axis == 1 && x == [0, 1]) || (axis == 0 && x[1] == 1 && (x[0] == -1 || x[0] == 0)) {
                return 0.0;
            }
            1.0
        })
        .unwrap()
    }

    #[test]
    fn all_strong_row_is_plain_row() {
        let f = sample_field(2, 3, &ConductanceLaw::Homogeneous { value: 1.0 }, 0).unwrap();
        let lab = components(&f, 0.5);
        let h: HatChain<f64> = hat_chain(&f, &lab, f.lattice().origin()).unwrap();
        assert_eq!(h.method, SolveMethod::Trivial);
        assert_eq!(h.row.len(), 4);
        assert!(h.row.iter().all(|(_, p)| *p == 0.25));
        assert_eq!(h.expected_hiding_time, 1.0);
        assert_eq!(h.component_size, 1);
    }

    #[test]
    fn dangling_site_hand_solve() {
        let f = dangling();
        let lab = components(&f, 0.5);
        let o = f.lattice().origin();
        let h: HatChain<f64> = hat_chain(&f, &lab, o).unwrap();
        assert!((h.prob(o) - 0.1 / 3.1).abs() < 1e-15);
        assert!((h.expected_hiding_time - (1.0 + 0.1 / 3.1)).abs() < 1e-15);
        assert!((h.expected_hiding_time - 1.032258).abs() < 1e-6);
        assert_eq!(h.component_size, 2);
        assert_eq!(h.hiding_bound(2, 0.5), 32.0);
        let e: HatChain<Exact> = hat_chain(&f, &lab, o).unwrap();
        assert_eq!(e.row_sum(), Exact::from_f64_value(1.0));
    }

    #[test]
    fn rows_are_stochastic_and_reversible() {
        let law = ConductanceLaw::TwoValue { p: 0.7, n: 10.0 };
        let f = sample_field(2, 6, &law, 21).unwrap();
        let lab = components(&f, 0.5);
        let lat = f.lattice();
        let anchors: Vec<usize> = (0..lat.site_count()).filter(|&s| lab.in_largest(s)).collect();
        let rows: Vec<HatChain<f64>> =
            hat_chains(&f, &lab, &anchors).into_iter().collect::<Result<_>>().unwrap();
        assert!(rows.iter().any(|r| r.method == SolveMethod::Direct));
        let (sym, sum) = symmetry_and_row_residuals(&rows);
        assert!(sym < 1e-10, "{sym}");
        assert!(sum < 1e-10, "{sum}");
        for r in &rows {
            assert!(r.expected_hiding_time >= 1.0);
            assert!(r.expected_hiding_time <= r.hiding_bound(2, 0.5));
        }
    }

    #[test]
    fn iterative_and_direct_agree() {
        // A long weak corridor above the origin: sites (0,1)..(0,150).
        let f = ConductanceField::from_fn(2, 151, |x, axis| {
            if x[0] == 0 && axis == 1 && x[1] >= 0 && x[1] < 151 {
                return 0.2;
            }
            if x[1] >= 1 {
                return 0.0;
            }
            if x[1] == 0 && axis == 1 {
                return 0.0;
            }
            1.0
        })
        .unwrap();
        let lab = components(&f, 0.5);
        let o = f.lattice().origin();
        let g = weak_component(&f, &lab, o).unwrap();
        assert!(g.interior.len() > DIRECT_LIMIT);
        let it: HatChain<f64> = hat_chain_from(&f, &g).unwrap();
        assert_eq!(it.method, SolveMethod::Iterative);
        // The corridor is a dead end, so every excursion comes back to the
        // origin; from (0,1) the mean return time on a 151-site path is 2·151 − 1.
        let p_up = 0.2 / 3.2;
        assert!((it.prob(o) - p_up).abs() < 1e-10);
        assert!((it.expected_hiding_time - (1.0 + p_up * 301.0)).abs() < 1e-6);
        let direct: HatChain<Exact> = hat_chain_from(&f, &g).unwrap();
        assert_eq!(direct.method, SolveMethod::Direct);
        assert!((direct.expected_hiding_time.as_f64() - it.expected_hiding_time).abs() < 1e-8);
    }

    #[test]
    fn coarse_mc_matches_hat_row() {
        let f = dangling();
        let lab = components(&f, 0.5);
        let o = f.lattice().origin();
        let h: HatChain<f64> = hat_chain(&f, &lab, o).unwrap();
        let (est, se) = mc_coarse_return(&f, &lab, o, 1, 1, 200_000, 3).unwrap();
        assert!((est - h.prob(o)).abs() <= 4.0 * se);
        let exact = hat_power(&f, &lab, o, 4).unwrap();
        let (est, se) = mc_coarse_return(&f, &lab, o, 4, 0, 200_000, 4).unwrap();
        assert!((est - exact[&o]).abs() <= 4.0 * se);
    }

    #[test]
    fn homogeneous_hiding_times_are_one() {
        let f = sample_field(2, 5, &ConductanceLaw::Homogeneous { value: 1.0 }, 0).unwrap();
        let lab = components(&f, 0.5);
        let o = f.lattice().origin();
        let (est, _) = mc_coarse_return(&f, &lab, o, 2, 3, 1000, 1).unwrap();
        assert_eq!(est, 0.0);
        let (est, se) = mc_coarse_return(&f, &lab, o, 2, 2, 100_000, 1).unwrap();
        assert!((est - 0.25).abs() <= 4.0 * se);
    }

    #[test]
    fn census_and_csv() {
        let f = dangling();
        let lab = components(&f, 0.5);
        let o = f.lattice().origin();
        let e = f.lattice().index(&[1, 0]).unwrap();
        let c = hiding_time_census(&f, &lab, &[o, e]).unwrap();
        assert!(c.violations().is_empty());
        assert_eq!(c.rows[1].size, 1);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,size_Gx,ET1,bound,row_entropy\n(0 0),2,"));
        let w = f.lattice().index(&[0, 1]).unwrap();
        assert!(hiding_time_census(&f, &lab, &[w]).is_err());
    }
}
