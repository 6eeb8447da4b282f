//! Trap configurations: a unit bond `y z` whose other incident bonds are all
//! weak, entered from an anchor `x` with `y = x + e_a`, `z = x + 2 e_a`.
//!
//! Includes the census, the `Σ |x|^{-(2d-4)}` sum, first-passage estimates
//! and a strategy lower bound on the return probability.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{bond_open, ClusterLabeling};
use crate::coarse::format_site;
use crate::env::Environment;
use crate::error::{RcmError, Result};
use crate::kernel::sample_step;
use crate::lattice::{euclidean_norm, Lattice};
use crate::rng::walker_rng;
use crate::stats::binomial;

/// One detected trap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapRecord {
    pub x: Vec<i32>,
    pub y: Vec<i32>,
    pub z: Vec<i32>,
    pub axis: usize,
    /// Largest conductance among the bonds at `y` or `z` other than `yz`.
    pub weak_scale: f64,
    /// Whether the anchor passed the cluster condition.
    pub anchored: bool,
    /// Hop distance from the origin's cluster point, when computed.
    pub dist_chem: Option<usize>,
}

struct Pattern {
    x: usize,
    y: usize,
    z: usize,
    axis: usize,
    weak_scale: f64,
}

/// Checks the local bond pattern for anchor `x` along `axis`. `y` and `z`
/// must be interior so every bond at them exists.
fn local_pattern<E: Environment + ?Sized>(field: &E, x: usize, axis: usize, weak_max: f64) -> Option<Pattern> {
    let lat = field.lattice();
    let xy = field.bond(x, axis, true);
    if !(xy > 0.0 && xy <= weak_max && xy < 1.0) {
        return None;
    }
    let y = lat.neighbor(x, axis, true)?;
    let z = lat.neighbor(y, axis, true)?;
    if field.bond(y, axis, true) < 1.0 {
        return None;
    }
    if lat.boundary_distance(y) == 0 || lat.boundary_distance(z) == 0 {
        return None;
    }
    let mut scale = xy;
    for (site, skip_down, skip_up) in [(y, true, true), (z, true, false)] {
        for b in 0..lat.dim() {
            for up in [false, true] {
                if b == axis && ((up && skip_up) || (!up && skip_down)) {
                    continue;
                }
                let w = field.bond(site, b, up);
                if !(w <= weak_max && w < 1.0) {
                    return None;
                }
                scale = scale.max(w);
            }
        }
    }
    Some(Pattern {
        x,
        y,
        z,
        axis,
        weak_scale: scale,
    })
}

fn scan<E: Environment + ?Sized>(field: &E, weak_max: f64) -> Vec<Pattern> {
    let lat = field.lattice();
    let d = lat.dim();
    (0..lat.site_count())
        .into_par_iter()
        .flat_map_iter(|x| (0..d).filter_map(move |a| local_pattern(field, x, a, weak_max)))
        .collect()
}

/// Hop distances over bonds open at the labeling's threshold, from the
/// origin, or from the nearest site of the largest component when the origin
/// is outside it.
fn distances_from_origin<E: Environment + ?Sized>(field: &E, labeling: &ClusterLabeling) -> Vec<u32> {
    let lat = field.lattice();
    let mut dist = vec![u32::MAX; lat.site_count()];
    let start = if labeling.in_largest(lat.origin()) {
        Some(lat.origin())
    } else {
        labeling.largest().and_then(|c| {
            labeling
                .sites_of(c)
                .into_iter()
                .min_by(|&a, &b| {
                    let na = euclidean_norm(&lat.coords(a));
                    let nb = euclidean_norm(&lat.coords(b));
                    na.partial_cmp(&nb).expect("finite").then(a.cmp(&b))
                })
        })
    };
    let Some(start) = start else {
        return dist;
    };
    let alpha = labeling.alpha();
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        for axis in 0..lat.dim() {
            for up in [false, true] {
                if !bond_open(field.bond(s, axis, up), alpha) {
                    continue;
                }
                let nb = lat.neighbor(s, axis, up).expect("open bond stays in box");
                if dist[nb] == u32::MAX {
                    dist[nb] = dist[s] + 1;
                    queue.push_back(nb);
                }
            }
        }
    }
    dist
}

fn record(lat: &Lattice, p: &Pattern, anchored: bool, dist_chem: Option<usize>) -> TrapRecord {
    TrapRecord {
        x: lat.coords(p.x),
        y: lat.coords(p.y),
        z: lat.coords(p.z),
        axis: p.axis,
        weak_scale: p.weak_scale,
        anchored,
        dist_chem,
    }
}

/// Every local trap pattern with weak scale at most `weak_max`, whether or
/// not the anchor lies in the largest component of `labeling`.
pub fn trap_patterns<E: Environment + ?Sized>(
    field: &E,
    labeling: &ClusterLabeling,
    weak_max: f64,
) -> Vec<TrapRecord> {
    let lat = field.lattice();
    let dist = distances_from_origin(field, labeling);
    scan(field, weak_max)
        .iter()
        .map(|p| {
            let d = (dist[p.x] != u32::MAX).then(|| dist[p.x] as usize);
            record(lat, p, labeling.in_largest(p.x), d)
        })
        .collect()
}

/// Traps whose anchor lies in the largest component of `labeling`, in site
/// order then axis order.
pub fn detect_traps<E: Environment + ?Sized>(
    field: &E,
    labeling: &ClusterLabeling,
    weak_max: f64,
) -> Vec<TrapRecord> {
    trap_patterns(field, labeling, weak_max)
        .into_iter()
        .filter(|t| t.anchored)
        .collect()
}

/// `ℓ_N = N^{(1 + 4dε)/d}`.
pub fn ell_n(level: u32, d: usize, epsilon: f64) -> f64 {
    (level as f64).powf((1.0 + 4.0 * d as f64 * epsilon) / d as f64)
}

/// Side of the connectivity box for scale `ell`: `(log ℓ)²` rounded up to
/// the next odd integer (at least 3).
pub fn anchor_box_side(ell: f64) -> usize {
    let s = ell.max(1.0).ln().powi(2).ceil().max(3.0) as usize;
    if s % 2 == 0 {
        s + 1
    } else {
        s
    }
}

/// Whether `x` reaches the boundary of the cube of odd side `side` centred
/// at `x` over bonds with `ω ≥ alpha`. Reaching the box boundary also counts
/// when the cube is clipped by it.
pub fn connects_to_box_boundary<E: Environment + ?Sized>(field: &E, x: usize, alpha: f64, side: usize) -> bool {
    let lat = field.lattice();
    let half = (side / 2) as i32;
    let cx = lat.coords(x);
    let mut seen = std::collections::HashSet::from([x]);
    let mut queue = VecDeque::from([x]);
    while let Some(s) = queue.pop_front() {
        let c = lat.coords(s);
        let linf = c.iter().zip(&cx).map(|(a, b)| (a - b).abs()).max().unwrap_or(0);
        if linf >= half || lat.on_boundary(s) {
            return true;
        }
        for axis in 0..lat.dim() {
            for up in [false, true] {
                if !bond_open(field.bond(s, axis, up), alpha) {
                    continue;
                }
                let nb = lat.neighbor(s, axis, up).expect("open bond stays in box");
                if seen.insert(nb) {
                    queue.push_back(nb);
                }
            }
        }
    }
    false
}

/// Trap detection with a local anchor condition: `x` must connect to the
/// boundary of the cube of side `side` around it over bonds with
/// `ω ≥ alpha`. Needs no global labeling, so it runs on procedural fields.
/// Only anchors with `|x| ≤ max_norm` are examined when a bound is given.
pub fn detect_traps_local<E: Environment + ?Sized>(
    field: &E,
    alpha: f64,
    weak_max: f64,
    side: usize,
    max_norm: Option<f64>,
) -> Vec<TrapRecord> {
    let lat = field.lattice();
    let d = lat.dim();
    let r2 = max_norm.map(|r| r * r);
    let patterns: Vec<Pattern> = (0..lat.site_count())
        .into_par_iter()
        .filter(|&x| match r2 {
            None => true,
            Some(r2) => {
                let mut buf = [0i32; crate::lattice::MAX_DIM];
                lat.coords_into(x, &mut buf);
                let n2: i64 = buf[..d].iter().map(|&c| i64::from(c) * i64::from(c)).sum();
                n2 as f64 <= r2
            }
        })
        .flat_map_iter(|x| (0..d).filter_map(move |a| local_pattern(field, x, a, weak_max)))
        .collect();
    patterns
        .iter()
        .filter(|p| connects_to_box_boundary(field, p.x, alpha, side))
        .map(|p| record(lat, p, true, None))
        .collect()
}

/// `Σ_{|x| ≤ √n} |x|^{-(2d-4)}` over trap anchors, Euclidean norm; anchors
/// with `|x| < 1` get weight 1.
pub fn trap_sum(traps: &[TrapRecord], n: u64, d: usize) -> f64 {
    let radius = (n as f64).sqrt();
    let power = 2.0 * d as f64 - 4.0;
    traps
        .iter()
        .map(|t| euclidean_norm(&t.x))
        .filter(|&r| r <= radius)
        .map(|r| if r < 1.0 { 1.0 } else { r.powf(-power) })
        .sum()
}

fn positive_path_exists<E: Environment + ?Sized>(field: &E, from: usize, to: usize) -> bool {
    if from == to {
        return true;
    }
    let lat = field.lattice();
    let mut seen = vec![false; lat.site_count()];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(s) = queue.pop_front() {
        for (nb, _) in field.open_neighbors(s) {
            if nb == to {
                return true;
            }
            if !seen[nb] {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    false
}

/// Monte Carlo estimate of `P_0(S_x ≤ n)` with `S_x` the first visit to `x`,
/// and its binomial standard error.
pub fn hitting_prob<E: Environment + ?Sized>(
    field: &E,
    x: &[i32],
    n: usize,
    walkers: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if walkers == 0 {
        return Err(RcmError::InvalidArgument("walkers must be at least 1".into()));
    }
    let lat = field.lattice();
    let origin = lat.origin();
    let target = lat.index_or_err(x)?;
    if target == origin {
        return Ok((1.0, 0.0));
    }
    if field.pi(origin) <= 0.0 || !positive_path_exists(field, origin, target) {
        return Err(RcmError::Disconnected(lat.coords(origin), x.to_vec()));
    }
    let hits: u64 = (0..walkers)
        .into_par_iter()
        .map(|i| {
            let mut rng = walker_rng(seed, i);
            let mut s = origin;
            for _ in 0..n {
                s = sample_step(field, s, &mut rng).expect("connected walk never strands");
                if s == target {
                    return 1;
                }
            }
            0
        })
        .sum();
    Ok(binomial(hits, walkers))
}

fn step_prob<E: Environment + ?Sized>(field: &E, a: usize, b: usize) -> f64 {
    let lat = field.lattice();
    for axis in 0..lat.dim() {
        for up in [false, true] {
            if lat.neighbor(a, axis, up) == Some(b) {
                return field.bond(a, axis, up) / field.pi(a);
            }
        }
    }
    0.0
}

/// Path from the origin to `target` maximising the product of one-step
/// probabilities `P(a,b)·P(b,a)` (there and back), avoiding `forbidden`.
fn best_round_trip<E: Environment + ?Sized>(field: &E, target: usize, forbidden: &[usize]) -> Option<Vec<usize>> {
    let lat = field.lattice();
    let origin = lat.origin();
    let mut cost: HashMap<usize, f64> = HashMap::from([(origin, 0.0)]);
    let mut prev: HashMap<usize, usize> = HashMap::new();
    let mut heap = BinaryHeap::from([Reverse((ordered(0.0), origin))]);
    while let Some(Reverse((c, s))) = heap.pop() {
        let c = c.0;
        if c > cost[&s] {
            continue;
        }
        if s == target {
            let mut path = vec![s];
            let mut cur = s;
            while let Some(&p) = prev.get(&cur) {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for (nb, _) in field.open_neighbors(s) {
            if forbidden.contains(&nb) {
                continue;
            }
            let w = -(step_prob(field, s, nb) * step_prob(field, nb, s)).ln();
            let nc = c + w;
            if cost.get(&nb).is_none_or(|&old| nc < old) {
                cost.insert(nb, nc);
                prev.insert(nb, s);
                heap.push(Reverse((ordered(nc), nb)));
            }
        }
    }
    None
}

#[derive(Clone, Copy, Debug)]
struct Ordered(f64);
impl PartialEq for Ordered {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Ordered {}
impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
fn ordered(v: f64) -> Ordered {
    Ordered(v)
}

/// Factors of the trap strategy bound on `P^steps(0,0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapBound {
    pub steps: usize,
    /// Hops from the origin to `x`; zero when the origin sits on the trap.
    pub path_len: usize,
    /// Product of step probabilities along the path and back.
    pub path: f64,
    pub entry: f64,
    pub stay: f64,
    pub exit: f64,
    pub value: f64,
}

/// Probability of `m` consecutive steps on the bond `yz` starting at `from`
/// (`y` or `z`).
fn stay_probability<E: Environment + ?Sized>(field: &E, from: usize, other: usize, m: usize) -> f64 {
    let p_from = step_prob(field, from, other);
    let p_other = step_prob(field, other, from);
    let pairs = (m / 2) as i32;
    let mut v = (p_from * p_other).powi(pairs);
    if m % 2 == 1 {
        v *= p_from;
    }
    v
}

/// Lower bound on `P_ω^steps(0,0)` from one concrete strategy: walk a path
/// to `x`, cross `xy`, oscillate on `yz` for the remaining time, cross back
/// and retrace the path. Every factor is an exact one-step probability of
/// the field. With `path` omitted the path maximising the round-trip product
/// and avoiding `y`, `z` is used. The bound is zero when the path is too long
/// or the parity does not fit.
pub fn trap_lower_bound<E: Environment + ?Sized>(
    field: &E,
    trap: &TrapRecord,
    steps: usize,
    path: Option<&[Vec<i32>]>,
) -> Result<TrapBound> {
    let lat = field.lattice();
    let origin = lat.origin();
    let x = lat.index_or_err(&trap.x)?;
    let y = lat.index_or_err(&trap.y)?;
    let z = lat.index_or_err(&trap.z)?;
    if step_prob(field, y, z) <= 0.0 || step_prob(field, x, y) <= 0.0 {
        return Err(RcmError::InvalidArgument(format!("no usable trap at {:?}", trap.x)));
    }
    if origin == y || origin == z {
        let other = if origin == y { z } else { y };
        let stay = if steps % 2 == 0 {
            stay_probability(field, origin, other, steps)
        } else {
            0.0
        };
        return Ok(TrapBound {
            steps,
            path_len: 0,
            path: 1.0,
            entry: 1.0,
            stay,
            exit: 1.0,
            value: stay,
        });
    }
    let sites: Vec<usize> = match path {
        Some(p) => {
            let sites = p.iter().map(|c| lat.index_or_err(c)).collect::<Result<Vec<_>>>()?;
            if sites.first() != Some(&origin) || sites.last() != Some(&x) {
                return Err(RcmError::InvalidArgument("path must run from the origin to x".into()));
            }
            sites
        }
        None => best_round_trip(field, x, &[y, z])
            .ok_or_else(|| RcmError::Disconnected(lat.coords(origin), trap.x.clone()))?,
    };
    let mut path_prob = 1.0;
    for w in sites.windows(2) {
        let p = step_prob(field, w[0], w[1]) * step_prob(field, w[1], w[0]);
        if p <= 0.0 {
            return Err(RcmError::Disconnected(lat.coords(w[0]), lat.coords(w[1])));
        }
        path_prob *= p;
    }
    let r = sites.len() - 1;
    let entry = step_prob(field, x, y);
    let exit = step_prob(field, y, x);
    let fits = steps >= 2 * r + 2 && (steps - 2 * r - 2) % 2 == 0;
    let stay = if fits {
        stay_probability(field, y, z, steps - 2 * r - 2)
    } else {
        0.0
    };
    Ok(TrapBound {
        steps,
        path_len: r,
        path: path_prob,
        entry,
        stay,
        exit,
        value: path_prob * entry * stay * exit,
    })
}

/// Spread of the path-probability ratio between the walk conditioned to use
/// only bonds with `ω ≥ alpha` and the simple random walk on that cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvoidanceRatio {
    pub steps: usize,
    pub samples: u64,
    pub min: f64,
    pub max: f64,
    /// `max(max, 1/min)`.
    pub k: f64,
}

/// Samples `samples` paths of length `steps` of the simple random walk on
/// the `ω ≥ alpha` cluster of the origin and compares each path's
/// probability under the conditioned walk, whose normaliser is computed
/// exactly by a killed evolution.
pub fn avoidance_ratio<E: Environment + ?Sized>(
    field: &E,
    alpha: f64,
    steps: usize,
    samples: u64,
    seed: u64,
) -> Result<AvoidanceRatio> {
    use rand::Rng;
    let lat = field.lattice();
    let origin = lat.origin();
    let strong = |s: usize| -> Vec<(usize, f64)> {
        field
            .open_neighbors(s)
            .into_iter()
            .filter(|&(_, w)| bond_open(w, alpha))
            .collect()
    };
    if strong(origin).is_empty() {
        return Err(RcmError::NotStrong(lat.coords(origin)));
    }
    if samples == 0 {
        return Err(RcmError::InvalidArgument("samples must be at least 1".into()));
    }
    // Probability that the unconditioned walk keeps to strong bonds.
    let mut mass: HashMap<usize, f64> = HashMap::from([(origin, 1.0)]);
    for _ in 0..steps {
        let mut next: HashMap<usize, f64> = HashMap::with_capacity(mass.len() * 2);
        for (&s, &m) in &mass {
            let pi = field.pi(s);
            for (nb, w) in strong(s) {
                *next.entry(nb).or_insert(0.0) += m * w / pi;
            }
        }
        mass = next;
    }
    let survive: f64 = mass.values().sum();
    let ratios: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = walker_rng(seed, i);
            let mut s = origin;
            let mut log_ratio = -survive.ln();
            for _ in 0..steps {
                let nbs = strong(s);
                let (nb, w) = nbs[rng.gen_range(0..nbs.len())];
                log_ratio += (w / field.pi(s)).ln() + (nbs.len() as f64).ln();
                s = nb;
            }
            log_ratio.exp()
        })
        .collect();
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().copied().fold(0.0, f64::max);
    Ok(AvoidanceRatio {
        steps,
        samples,
        min,
        max,
        k: max.max(1.0 / min),
    })
}

/// Writes `x,y,z,weak_scale,dist_chem`.
pub fn write_traps_csv<W: Write>(traps: &[TrapRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "z", "weak_scale", "dist_chem"])?;
    for t in traps {
        w.write_record([
            format_site(&t.x),
            format_site(&t.y),
            format_site(&t.z),
            format!("{:e}", t.weak_scale),
            t.dist_chem.map_or(String::new(), |d| d.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the bounds table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: usize,
    pub exact: f64,
    pub lower_bound: f64,
}

impl BoundRow {
    pub fn ratio(&self) -> f64 {
        self.exact / self.lower_bound
    }
}

/// Writes `n,exact,lower_bound,ratio`.
pub fn write_bounds_csv<W: Write>(rows: &[BoundRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "exact", "lower_bound", "ratio"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            format!("{:e}", r.exact),
            format!("{:e}", r.lower_bound),
            format!("{:e}", r.ratio()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::components;
    use crate::env::{ConductanceField, ConductanceLaw};
    use crate::kernel::{evolve, Dynamics};

    fn homogeneous(d: usize, radius: u32) -> ConductanceField {
        ConductanceField::sample(d, radius, &ConductanceLaw::Homogeneous { value: 1.0 }, 0).unwrap()
    }

    #[test]
    fn homogeneous_field_has_no_traps() {
        let f = homogeneous(2, 6);
        let lab = components(&f, 1.0);
        assert!(detect_traps(&f, &lab, 0.5).is_empty());
    }

    #[test]
    fn planted_traps_found_on_every_axis() {
        for axis in 0..3 {
            let mut x = vec![1, -1, 0];
            x[axis] = -2;
            let f = homogeneous(3, 5).plant_trap(&x, 0.01, axis).unwrap();
            let lab = components(&f, 1.0);
            let traps = detect_traps(&f, &lab, 0.1);
            assert_eq!(traps.len(), 1, "axis {axis}");
            let t = &traps[0];
            assert_eq!(t.x, x);
            assert_eq!(t.axis, axis);
            assert_eq!(t.weak_scale, 0.01);
            assert_eq!(t.dist_chem, Some(crate::lattice::l1_norm(&x) as usize));
            assert!(detect_traps(&f, &lab, 0.005).is_empty());
        }
    }

    #[test]
    fn local_detection_agrees_on_planted_field() {
        let f = homogeneous(2, 8).plant_trap(&[2, 1], 0.02, 0).unwrap();
        let traps = detect_traps_local(&f, 1.0, 0.1, anchor_box_side(50.0), None);
        assert_eq!(traps.len(), 1);
        assert_eq!(traps[0].y, vec![3, 1]);
        assert!(detect_traps_local(&f, 1.0, 0.1, 5, Some(2.0)).is_empty());
    }

    #[test]
    fn box_side_is_odd() {
        assert_eq!(anchor_box_side(1.0), 3);
        // (ln 64)² ≈ 17.3
        assert_eq!(anchor_box_side(64.0), 19);
        assert_eq!(anchor_box_side(std::f64::consts::E.powi(4)), 17);
    }

    fn at(x: &[i32]) -> TrapRecord {
        TrapRecord {
            x: x.to_vec(),
            y: vec![],
            z: vec![],
            axis: 0,
            weak_scale: 0.1,
            anchored: true,
            dist_chem: None,
        }
    }

    #[test]
    fn trap_sum_arithmetic() {
        let traps = [at(&[1, 0, 0, 0]), at(&[0, 2, 0, 0])];
        assert!((trap_sum(&traps, 4, 4) - 1.0625).abs() < 1e-15);
        assert_eq!(trap_sum(&traps, 3, 4), 1.0);
        assert_eq!(trap_sum(&[], 100, 4), 0.0);
        assert_eq!(trap_sum(&[at(&[0, 0, 0, 0])], 1, 4), 1.0);
    }

    #[test]
    fn hitting_origin_and_neighbour() {
        let f = homogeneous(2, 4);
        assert_eq!(hitting_prob(&f, &[0, 0], 5, 10, 1).unwrap(), (1.0, 0.0));
        let (p, se) = hitting_prob(&f, &[1, 0], 1, 40_000, 3).unwrap();
        assert!((p - 0.25).abs() < 4.0 * se, "{p} ± {se}");
    }

    #[test]
    fn hitting_disconnected_errors() {
        let f = ConductanceField::from_fn(2, 3, |x, axis| if axis == 0 && x[0] == 1 { 0.0 } else { 1.0 }).unwrap();
        assert!(matches!(hitting_prob(&f, &[3, 0], 10, 10, 0), Err(RcmError::Disconnected(..))));
    }

    #[test]
    fn lower_bound_below_exact_kernel() {
        let f = homogeneous(2, 24).plant_trap(&[3, 0], 0.05, 0).unwrap();
        let lab = components(&f, 1.0);
        let trap = detect_traps(&f, &lab, 0.1).remove(0);
        for steps in (8..=24).step_by(2) {
            let b = trap_lower_bound(&f, &trap, steps, None).unwrap();
            let exact = evolve::<_, f64>(&f, &[0, 0], steps, Dynamics::Full).unwrap().get(&[0, 0]);
            assert!(b.value <= exact, "steps {steps}: {} > {exact}", b.value);
            assert!(b.value > 0.0);
            assert_eq!(b.path_len, 3);
        }
        assert_eq!(trap_lower_bound(&f, &trap, 6, None).unwrap().value, 0.0);
    }

    #[test]
    fn hand_computed_bound() {
        // Origin is x itself: entry 0.05/3.05, stay (1/1.15)^m, exit 0.05/1.15.
        let f = homogeneous(2, 6).plant_trap(&[0, 0], 0.05, 0).unwrap();
        let lab = components(&f, 1.0);
        let trap = detect_traps(&f, &lab, 0.1).remove(0);
        let b = trap_lower_bound(&f, &trap, 10, None).unwrap();
        let expected = 0.05 / 3.05 * (1.0f64 / 1.15).powi(8) * 0.05 / 1.15;
        assert!((b.value - expected).abs() < 1e-14 * expected, "{} vs {expected}", b.value);
    }

    #[test]
    fn stay_decreases_with_leakage() {
        let mut last = 1.0;
        for w in [0.001, 0.01, 0.05, 0.2] {
            let f = homogeneous(2, 6).plant_trap(&[-1, 0], w, 0).unwrap();
            let lab = components(&f, 1.0);
            let trap = detect_traps(&f, &lab, 0.5).remove(0);
            let b = trap_lower_bound(&f, &trap, 20, None).unwrap();
            assert!((b.stay - (1.0 / (1.0 + 3.0 * w)).powi(20)).abs() < 1e-12);
            assert!(b.value < last);
            last = b.value;
        }
    }

    #[test]
    fn supplied_path_must_start_at_origin() {
        let f = homogeneous(2, 6).plant_trap(&[2, 0], 0.05, 0).unwrap();
        let lab = components(&f, 1.0);
        let trap = detect_traps(&f, &lab, 0.1).remove(0);
        let bad = vec![vec![1, 0], vec![2, 0]];
        assert!(trap_lower_bound(&f, &trap, 20, Some(&bad)).is_err());
        let good = vec![vec![0, 0], vec![0, 1], vec![1, 1], vec![2, 1], vec![2, 0]];
        let b = trap_lower_bound(&f, &trap, 20, Some(&good)).unwrap();
        assert_eq!(b.path_len, 4);
        assert!(b.value < trap_lower_bound(&f, &trap, 20, None).unwrap().value);
    }

    #[test]
    fn avoidance_ratio_is_one_on_homogeneous_field() {
        let f = homogeneous(2, 10);
        let r = avoidance_ratio(&f, 1.0, 8, 50, 0).unwrap();
        assert!((r.k - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_traps_csv(&[at(&[1, 2])], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x,y,z,weak_scale,dist_chem\n(1 2),"));
        let mut buf = Vec::new();
        write_bounds_csv(&[BoundRow { n: 8, exact: 0.2, lower_bound: 0.1 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().nth(1), Some("8,2e-1,1e-1,2e0"));
    }
}
