//! Sampled isoperimetric ratios on the strong cluster and the block events
//! `G_N` of the renormalisation argument.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::enumerate::{grow_connected, refine_by_swaps};
use crate::cluster::{bond_open, components, UnionFind};
use crate::env::Environment;
use crate::error::{RcmError, Result};
use crate::lattice::{linf_norm, Lattice};
use crate::rng::{counter_uniform, derive_seed, domain, lattice_key, walker_rng};
use crate::stats::binomial;

/// Occupied edges (`ω ≥ α`) between `set` and its complement in `Z^d`.
pub fn boundary_edges<E: Environment + ?Sized>(field: &E, alpha: f64, set: &[usize]) -> usize {
    let member: std::collections::HashSet<usize> = set.iter().copied().collect();
    set.iter()
        .map(|&x| {
            field
                .open_neighbors(x)
                .into_iter()
                .filter(|(y, w)| bond_open(*w, alpha) && !member.contains(y))
                .count()
        })
        .sum()
}

/// `|∂^ω Λ| / |Λ|^{(d−1)/d}`.
pub fn boundary_ratio<E: Environment + ?Sized>(field: &E, alpha: f64, set: &[usize]) -> f64 {
    let d = field.lattice().dim() as f64;
    boundary_edges(field, alpha, set) as f64 / (set.len() as f64).powf((d - 1.0) / d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoParams {
    pub samples: usize,
    /// Size floor `(c1 log R)^{d/(d−1)}`.
    pub c1: f64,
    /// Target sizes are uniform on `[floor, max_factor · floor]`.
    pub max_factor: f64,
    pub seed: u64,
}

impl Default for IsoParams {
    fn default() -> Self {
        Self { samples: 1000, c1: 1.0, max_factor: 4.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoCheck {
    pub radius: u32,
    pub size_floor: usize,
    pub min_ratio: f64,
    pub witness: Vec<usize>,
    pub candidates: usize,
}

/// Smallest `|∂^ωΛ|/|Λ|^{(d−1)/d}` over grown connected subsets `Λ` of the
/// strong cluster inside `[−R, R]^d` with at least the floor size.
pub fn check_isoperimetry<E: Environment + ?Sized>(
    field: &E,
    alpha: f64,
    radius: u32,
    params: &IsoParams,
) -> Result<IsoCheck> {
    let lat = field.lattice();
    let d = lat.dim() as f64;
    let strong = components(field, alpha);
    let sites: Vec<usize> = match strong.largest() {
        Some(c) => strong
            .sites_of(c)
            .into_iter()
            .filter(|&s| linf_norm(&lat.coords(s)) <= radius)
            .collect(),
        None => Vec::new(),
    };
    let index: HashMap<usize, usize> = sites.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let adj: Vec<Vec<usize>> = sites
        .iter()
        .map(|&s| {
            field
                .open_neighbors(s)
                .into_iter()
                .filter(|(_, w)| bond_open(*w, alpha))
                .filter_map(|(y, _)| index.get(&y).copied())
                .collect()
        })
        .collect();
    let floor = ((params.c1 * (radius as f64).ln()).powf(d / (d - 1.0))).ceil().max(1.0) as usize;
    let top = ((floor as f64) * params.max_factor).floor().max(floor as f64) as usize;
    if sites.len() < floor {
        return Err(RcmError::InvalidArgument(format!(
            "strong cluster has {} sites in the box, below the size floor {floor}",
            sites.len()
        )));
    }
    let results: Vec<(f64, Vec<usize>)> = (0..params.samples as u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = walker_rng(params.seed, i);
            let start = rng.gen_range(0..sites.len());
            let target = rng.gen_range(floor..=top);
            let mut set = grow_connected(&adj, start, target, &mut rng, |_| {});
            if set.len() < floor {
                return None;
            }
            let rounds = 2 * set.len();
            let to_sites = |s: &[usize]| -> Vec<usize> { s.iter().map(|&j| sites[j]).collect() };
            refine_by_swaps(&adj, &mut set, rounds, &mut rng, |s| {
                boundary_edges(field, alpha, &to_sites(s)) as f64
            });
            let global = to_sites(&set);
            Some((boundary_ratio(field, alpha, &global), global))
        })
        .collect();
    let candidates = results.len();
    let (min_ratio, mut witness) = results
        .into_iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).expect("finite ratio"))
        .ok_or_else(|| RcmError::InvalidArgument(format!("no sampled set reached the size floor {floor}")))?;
    witness.sort_unstable();
    Ok(IsoCheck { radius, size_floor: floor, min_ratio, witness, candidates })
}

/// Writes `R,min_ratio,witness_size`.
pub fn write_iso_csv<W: Write>(rows: &[IsoCheck], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["R", "min_ratio", "witness_size"])?;
    for r in rows {
        w.write_record([r.radius.to_string(), r.min_ratio.to_string(), r.witness.len().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Whether `G_N(0)` occurs in the bond-percolation configuration with
/// parameter `p` keyed by `seed`.
pub fn gn_event(p: f64, n: u32, d: usize, seed: u64) -> Result<bool> {
    if n == 0 || d < 2 {
        return Err(RcmError::InvalidArgument("need N ≥ 1 and d ≥ 2".into()));
    }
    let ni = n as i32;
    // Local box [0, 3N]^d stands for [−N, 2N]^d.
    let local = Lattice::new(d, 3 * n)?;
    let lo = -ni;
    let to_index = |x: &[i32]| -> usize {
        x.iter()
            .enumerate()
            .map(|(a, &c)| (c - lo) as usize * local.stride(a))
            .sum()
    };
    let open = |x: &[i32], axis: usize| -> bool {
        counter_uniform(seed, domain::EDGE, lattice_key(x, 1 + axis as u64)) < p
    };
    // Bonds inside a box [lo_b, hi_b] (per axis), unioned.
    let union_box = |lo_b: &[i32], hi_b: &[i32]| -> UnionFind {
        let mut uf = UnionFind::new(local.site_count());
        let mut x = lo_b.to_vec();
        loop {
            for axis in 0..d {
                if x[axis] < hi_b[axis] && open(&x, axis) {
                    let mut y = x.clone();
                    y[axis] += 1;
                    uf.union(to_index(&x), to_index(&y));
                }
            }
            let mut a = 0;
            loop {
                if a == d {
                    return uf;
                }
                if x[a] < hi_b[a] {
                    x[a] += 1;
                    break;
                }
                x[a] = lo_b[a];
                a += 1;
            }
        }
    };
    let sites_in = |lo_b: &[i32], hi_b: &[i32]| -> Vec<Vec<i32>> {
        let mut out = Vec::new();
        let mut x = lo_b.to_vec();
        loop {
            out.push(x.clone());
            let mut a = 0;
            loop {
                if a == d {
                    return out;
                }
                if x[a] < hi_b[a] {
                    x[a] += 1;
                    break;
                }
                x[a] = lo_b[a];
                a += 1;
            }
        }
    };

    // (1) Each neighbouring block is crossed between its near and far faces.
    for axis in 0..d {
        for up in [true, false] {
            let mut lo_b = vec![0; d];
            let mut hi_b = vec![ni; d];
            let (near, far) = if up {
                lo_b[axis] = ni;
                hi_b[axis] = 2 * ni;
                (ni, 2 * ni)
            } else {
                lo_b[axis] = -ni;
                hi_b[axis] = 0;
                (0, -ni)
            };
            let mut uf = union_box(&lo_b, &hi_b);
            let block = sites_in(&lo_b, &hi_b);
            let near_roots: std::collections::HashSet<usize> = block
                .iter()
                .filter(|x| x[axis] == near)
                .map(|x| uf.find(to_index(x)))
                .collect();
            let crossed = block
                .iter()
                .filter(|x| x[axis] == far)
                .any(|x| near_roots.contains(&uf.find(to_index(x))));
            if !crossed {
                return Ok(false);
            }
        }
    }

    // (2) At most one cluster of the big box joins B_N(0) to its boundary.
    let big_lo = vec![-ni; d];
    let big_hi = vec![2 * ni; d];
    let mut uf = union_box(&big_lo, &big_hi);
    let core: std::collections::HashSet<usize> = sites_in(&vec![0; d], &vec![ni; d])
        .iter()
        .map(|x| uf.find(to_index(x)))
        .collect();
    let mut touching = std::collections::HashSet::new();
    for x in sites_in(&big_lo, &big_hi) {
        if !x.iter().any(|&c| c == -ni || c == 2 * ni) {
            continue;
        }
        let r = uf.find(to_index(&x));
        if core.contains(&r) {
            touching.insert(r);
            if touching.len() > 1 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Frequency of `G_N(0)` over `ensemble` independent configurations.
pub fn gn_probability(p: f64, n: u32, d: usize, ensemble: u64, seed: u64) -> Result<(f64, f64)> {
    if ensemble == 0 {
        return Err(RcmError::InvalidArgument("ensemble must be positive".into()));
    }
    let hits: u64 = (0..ensemble)
        .into_par_iter()
        .map(|i| gn_event(p, n, d, derive_seed(seed, i)).map(u64::from))
        .sum::<Result<u64>>()?;
    Ok(binomial(hits, ensemble))
}

/// Writes `N,p,estimate,stderr`.
pub fn write_gn_csv<W: Write>(rows: &[(u32, f64, f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "p", "estimate", "stderr"])?;
    for (n, p, e, s) in rows {
        w.write_record([n.to_string(), p.to_string(), e.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_field, ConductanceLaw};

    #[test]
    fn gn_extremes() {
        assert_eq!(gn_probability(1.0, 3, 2, 20, 1).unwrap(), (1.0, 0.0));
        assert_eq!(gn_probability(0.0, 3, 2, 20, 1).unwrap(), (0.0, 0.0));
        assert_eq!(gn_probability(1.0, 2, 3, 5, 1).unwrap().0, 1.0);
    }

    #[test]
    fn squares_have_ratio_four() {
        let f = sample_field(2, 8, &ConductanceLaw::Homogeneous { value: 1.0 }, 0).unwrap();
        let lat = f.lattice();
        for k in 2..=5 {
            let set: Vec<usize> = (0..k)
                .flat_map(|i| (0..k).map(move |j| [i, j]))
                .map(|x| lat.index(&x).unwrap())
                .collect();
            assert_eq!(boundary_ratio(&f, 0.5, &set), 4.0);
        }
    }

    #[test]
    fn sampled_minimum_is_positive() {
        let law = ConductanceLaw::BernoulliPerc { p: 0.7 };
        let f = sample_field(2, 20, &law, 2).unwrap();
        let params = IsoParams { samples: 50, seed: 9, ..IsoParams::default() };
        let c = check_isoperimetry(&f, 0.5, 16, &params).unwrap();
        assert!(c.min_ratio > 0.0);
        assert!(c.witness.len() >= c.size_floor);
        assert_eq!(c, check_isoperimetry(&f, 0.5, 16, &params).unwrap());
    }
}
