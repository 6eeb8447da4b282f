//! Connected components of the bond subgraph `{b : ω_b ≥ α}`, weak
//! components around strong sites, and chemical distances.
//!
//! Threshold convention: `α = 0` means "ω_b > 0"; any positive `α` means
//! "ω_b ≥ α".

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use crate::env::{ConductanceLaw, Environment};
use crate::error::{RcmError, Result};
use crate::lattice::Lattice;

pub const NO_COMPONENT: u32 = u32::MAX;

#[inline]
pub fn bond_open(w: f64, alpha: f64) -> bool {
    if alpha <= 0.0 {
        w > 0.0
    } else {
        w >= alpha
    }
}

/// Disjoint sets with union by size; roots store `-size`.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<i32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        assert!(n < i32::MAX as usize, "too many elements for union-find");
        Self { parent: vec![-1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] >= 0 {
            root = self.parent[root] as usize;
        }
        while self.parent[x] >= 0 {
            let next = self.parent[x] as usize;
            self.parent[x] = root as i32;
            x = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.parent[ra] > self.parent[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[ra] += self.parent[rb];
        self.parent[rb] = ra as i32;
        true
    }

    pub fn size(&mut self, x: usize) -> usize {
        let r = self.find(x);
        (-self.parent[r]) as usize
    }
}

/// Component labels at one threshold.
#[derive(Clone, Debug)]
pub struct ClusterLabeling {
    alpha: f64,
    lattice: Lattice,
    component: Vec<u32>,
    sizes: Vec<u32>,
    touches_boundary: Vec<bool>,
    largest: Option<u32>,
}

impl ClusterLabeling {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn component_of(&self, site: usize) -> Option<u32> {
        let c = self.component[site];
        (c != NO_COMPONENT).then_some(c)
    }

    pub fn component_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn size_of(&self, comp: u32) -> usize {
        self.sizes[comp as usize] as usize
    }

    pub fn touches_boundary(&self, comp: u32) -> bool {
        self.touches_boundary[comp as usize]
    }

    /// Id of the largest component (the infinite-cluster surrogate).
    pub fn largest(&self) -> Option<u32> {
        self.largest
    }

    pub fn largest_size(&self) -> usize {
        self.largest.map_or(0, |c| self.size_of(c))
    }

    /// Whether `site` lies in the largest component.
    #[inline]
    pub fn in_largest(&self, site: usize) -> bool {
        self.largest.is_some_and(|c| self.component[site] == c)
    }

    pub fn second_largest_size(&self) -> usize {
        let mut sizes: Vec<u32> = self.sizes.clone();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes.get(1).copied().unwrap_or(0) as usize
    }

    /// Histogram `size → number of components`.
    pub fn size_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for &s in &self.sizes {
            *h.entry(s as usize).or_insert(0) += 1;
        }
        h
    }

    pub fn sites_of(&self, comp: u32) -> Vec<usize> {
        (0..self.component.len())
            .filter(|&s| self.component[s] == comp)
            .collect()
    }

    /// Writes `alpha,comp_id,size,touches_boundary` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["alpha", "comp_id", "size", "touches_boundary"])?;
        for (id, (&size, &touch)) in self.sizes.iter().zip(&self.touches_boundary).enumerate() {
            w.write_record([
                self.alpha.to_string(),
                id.to_string(),
                size.to_string(),
                touch.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Labels the components of `{b : ω_b ≥ α}`; sites with no qualifying bond
/// get no label. Ids are assigned in site order.
pub fn components<E: Environment + ?Sized>(field: &E, alpha: f64) -> ClusterLabeling {
    let lat = field.lattice().clone();
    let n = lat.site_count();
    let mut uf = UnionFind::new(n);
    let mut has_bond = vec![false; n];
    for site in 0..n {
        for axis in 0..lat.dim() {
            if let Some(nb) = lat.neighbor(site, axis, true) {
                if bond_open(field.bond(site, axis, true), alpha) {
                    uf.union(site, nb);
                    has_bond[site] = true;
                    has_bond[nb] = true;
                }
            }
        }
    }
    let mut component = vec![NO_COMPONENT; n];
    let mut root_id: Vec<u32> = vec![NO_COMPONENT; n];
    let mut sizes = Vec::new();
    let mut touches = Vec::new();
    for site in 0..n {
        if !has_bond[site] {
            continue;
        }
        let r = uf.find(site);
        if root_id[r] == NO_COMPONENT {
            root_id[r] = sizes.len() as u32;
            sizes.push(0u32);
            touches.push(false);
        }
        let id = root_id[r];
        component[site] = id;
        sizes[id as usize] += 1;
        if lat.on_boundary(site) {
            touches[id as usize] = true;
        }
    }
    let largest = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as u32);
    ClusterLabeling {
        alpha,
        lattice: lat,
        component,
        sizes,
        touches_boundary: touches,
        largest,
    }
}

/// A finite component of `C_∞ \ C_∞,α` reached from an anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakCluster {
    pub sites: Vec<usize>,
    /// ℓ∞ diameter.
    pub diameter: u32,
}

/// The weak component `G_x` incident to a strong site `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakComponent {
    pub anchor: usize,
    /// `G_x`: the anchor, `G'_x`, and strong sites adjacent to `G'_x`.
    pub sites: Vec<usize>,
    /// `G'_x`: union of the weak clusters adjacent to the anchor.
    pub interior: Vec<usize>,
    /// Strong sites other than the anchor adjacent to `G'_x`.
    pub strong_boundary: Vec<usize>,
    pub clusters: Vec<WeakCluster>,
}

impl WeakComponent {
    pub fn size(&self) -> usize {
        self.sites.len()
    }

    pub fn max_cluster_diameter(&self) -> u32 {
        self.clusters.iter().map(|c| c.diameter).max().unwrap_or(0)
    }
}

fn linf_diameter(lat: &Lattice, sites: &[usize]) -> u32 {
    (0..lat.dim())
        .map(|a| {
            let (lo, hi) = sites.iter().fold((i32::MAX, i32::MIN), |(lo, hi), &s| {
                let c = lat.coord(s, a);
                (lo.min(c), hi.max(c))
            });
            (hi - lo) as u32
        })
        .max()
        .unwrap_or(0)
}

/// BFS over positive bonds through non-strong sites, from `seed`.
fn weak_cluster_from<E: Environment + ?Sized>(
    field: &E,
    strong: &ClusterLabeling,
    seed: usize,
    seen: &mut std::collections::HashSet<usize>,
) -> Vec<usize> {
    let lat = field.lattice();
    let mut out = vec![seed];
    let mut queue = VecDeque::from([seed]);
    seen.insert(seed);
    while let Some(s) = queue.pop_front() {
        for (nb, _) in field.open_neighbors(s) {
            if !strong.in_largest(nb) && seen.insert(nb) {
                out.push(nb);
                queue.push_back(nb);
            }
        }
    }
    let _ = lat;
    out
}

/// Weak component incident to the strong site `x` (see [`WeakComponent`]).
/// With no weak neighbours `G_x = {x}`.
pub fn weak_component<E: Environment + ?Sized>(
    field: &E,
    strong: &ClusterLabeling,
    x: usize,
) -> Result<WeakComponent> {
    let lat = field.lattice();
    if !strong.in_largest(x) {
        return Err(RcmError::NotStrong(lat.coords(x)));
    }
    let mut seen = std::collections::HashSet::new();
    let mut clusters = Vec::new();
    let mut interior = Vec::new();
    for (y, _) in field.open_neighbors(x) {
        if strong.in_largest(y) || seen.contains(&y) {
            continue;
        }
        let sites = weak_cluster_from(field, strong, y, &mut seen);
        let diameter = linf_diameter(lat, &sites);
        interior.extend_from_slice(&sites);
        clusters.push(WeakCluster { sites, diameter });
    }
    interior.sort_unstable();
    let mut boundary: Vec<usize> = interior
        .iter()
        .flat_map(|&w| field.open_neighbors(w))
        .map(|(nb, _)| nb)
        .filter(|&nb| nb != x && strong.in_largest(nb))
        .collect();
    boundary.sort_unstable();
    boundary.dedup();
    let mut sites = interior.clone();
    sites.push(x);
    sites.extend_from_slice(&boundary);
    sites.sort_unstable();
    Ok(WeakComponent {
        anchor: x,
        sites,
        interior,
        strong_boundary: boundary,
        clusters,
    })
}

/// All weak clusters: components of `C_∞ \ C_∞,α`, where `C_∞` is the largest
/// positive-bond component and `C_∞,α` the largest component of `strong`.
pub fn weak_clusters<E: Environment + ?Sized>(
    field: &E,
    positive: &ClusterLabeling,
    strong: &ClusterLabeling,
) -> Vec<WeakCluster> {
    let lat = field.lattice();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for s in 0..lat.site_count() {
        if positive.in_largest(s) && !strong.in_largest(s) && !seen.contains(&s) {
            let sites = weak_cluster_from(field, strong, s, &mut seen);
            let diameter = linf_diameter(lat, &sites);
            out.push(WeakCluster { sites, diameter });
        }
    }
    out
}

/// Hop distance between `x` and `y` over bonds open at the labeling's
/// threshold.
pub fn chemical_distance<E: Environment + ?Sized>(
    field: &E,
    labeling: &ClusterLabeling,
    x: usize,
    y: usize,
) -> Result<usize> {
    let lat = field.lattice();
    if x == y {
        return Ok(0);
    }
    match (labeling.component_of(x), labeling.component_of(y)) {
        (Some(a), Some(b)) if a == b => {}
        _ => return Err(RcmError::Disconnected(lat.coords(x), lat.coords(y))),
    }
    let alpha = labeling.alpha();
    let mut dist = std::collections::HashMap::from([(x, 0usize)]);
    let mut queue = VecDeque::from([x]);
    while let Some(s) = queue.pop_front() {
        let ds = dist[&s];
        for axis in 0..lat.dim() {
            for up in [false, true] {
                if !bond_open(field.bond(s, axis, up), alpha) {
                    continue;
                }
                let nb = lat.neighbor(s, axis, up).expect("open bond stays in box");
                if nb == y {
                    return Ok(ds + 1);
                }
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(nb) {
                    e.insert(ds + 1);
                    queue.push_back(nb);
                }
            }
        }
    }
    Err(RcmError::Disconnected(lat.coords(x), lat.coords(y)))
}

/// Smallest support value `α` of `law` (among `candidates` if given) with
/// `P(ω ≥ α) > p_c(d)` whose sampled weak clusters stay away from the box
/// boundary.
pub fn select_alpha<E: Environment + ?Sized>(
    law: &ConductanceLaw,
    field: &E,
    candidates: Option<&[f64]>,
) -> Result<Option<f64>> {
    let table = law.table()?;
    let d = field.lattice().dim();
    let mut grid: Vec<f64> = match candidates {
        Some(c) => c.to_vec(),
        None => table.values().iter().copied().filter(|v| *v > 0.0).collect(),
    };
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    grid.dedup();
    let positive = components(field, 0.0);
    for alpha in grid {
        if table.mass_at_least(alpha) <= crate::env::bond_threshold(d) {
            continue;
        }
        let strong = components(field, alpha);
        let lat = field.lattice();
        let finite = weak_clusters(field, &positive, &strong)
            .iter()
            .all(|c| c.sites.iter().all(|&s| !lat.on_boundary(s)));
        if finite {
            return Ok(Some(alpha));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_field, ConductanceField};

    #[test]
    fn all_ones_is_one_component() {
        let f = sample_field(2, 4, &ConductanceLaw::Homogeneous { value: 1.0 }, 0).unwrap();
        let lab = components(&f, 0.5);
        assert_eq!(lab.component_count(), 1);
        assert_eq!(lab.largest_size(), 81);
    }

    #[test]
    fn path_with_weak_middle_splits() {
        // Sites (-2,0)..(2,0); the bond (0,0)-(1,0) is weak.
        let f = ConductanceField::from_fn(2, 2, |x, axis| match (x, axis) {
            ([-2, 0], 0) | ([-1, 0], 0) | ([1, 0], 0) => 1.0,
            ([0, 0], 0) => 0.1,
            _ => 0.0,
        })
        .unwrap();
        let lab = components(&f, 0.5);
        let mut sizes: Vec<usize> = (0..lab.component_count() as u32).map(|c| lab.size_of(c)).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 3]);
        assert_eq!(components(&f, 0.0).component_count(), 1);
    }

    #[test]
    fn neighbours_share_ids_iff_bond_open() {
        let law = ConductanceLaw::TwoValue { p: 0.55, n: 4.0 };
        let f = sample_field(2, 10, &law, 3).unwrap();
        let lab = components(&f, 0.5);
        let lat = f.lattice();
        for s in 0..lat.site_count() {
            for (nb, slot) in lat.neighbors(s) {
                if bond_open(f.slot_value(slot), 0.5) {
                    assert_eq!(lab.component_of(s), lab.component_of(nb));
                }
            }
        }
        let hist = lab.size_histogram();
        assert_eq!(*hist.keys().last().unwrap(), lab.largest_size());
        let covered: usize = hist.iter().map(|(s, c)| s * c).sum();
        assert_eq!(covered, (0..lat.site_count()).filter(|&s| lab.component_of(s).is_some()).count());
    }

    #[test]
    fn weak_component_cases() {
        let f = sample_field(2, 3, &ConductanceLaw::Homogeneous { value: 1.0 }, 0).unwrap();
        let lab = components(&f, 0.5);
        let o = f.lattice().origin();
        let g = weak_component(&f, &lab, o).unwrap();
        assert_eq!(g.sites, vec![o]);

        // Dangling weak site w = (0,1) attached only to the origin.
        let f = ConductanceField::from_fn(2, 3, |x, axis| {
            if axis == 1 && (x == [0, 0] || x == [0, 1]) {
                return if x == [0, 0] { 0.1 } else { 0.0 };
            }
            if axis == 0 && x[1] == 1 && (x[0] == -1 || x[0] == 0) {
                return 0.0;
            }
            1.0
        })
        .unwrap();
        let lab = components(&f, 0.5);
        let w = f.lattice().index(&[0, 1]).unwrap();
        assert!(!lab.in_largest(w));
        let g = weak_component(&f, &lab, o).unwrap();
        let mut want = vec![o, w];
        want.sort();
        assert_eq!(g.sites, want);
        assert_eq!(g.max_cluster_diameter(), 0);
        assert!(weak_component(&f, &lab, w).is_err());
    }

    #[test]
    fn chemical_distance_cases() {
        let f = sample_field(2, 3, &ConductanceLaw::Homogeneous { value: 1.0 }, 0).unwrap();
        let lab = components(&f, 0.5);
        let lat = f.lattice();
        let o = lat.origin();
        assert_eq!(chemical_distance(&f, &lab, o, o).unwrap(), 0);
        let e = lat.index(&[1, 0]).unwrap();
        assert_eq!(chemical_distance(&f, &lab, o, e).unwrap(), 1);
        let far = lat.index(&[3, -2]).unwrap();
        assert_eq!(chemical_distance(&f, &lab, o, far).unwrap(), 5);

        let g = ConductanceField::from_fn(2, 2, |x, a| if x == [0, 0] && a == 0 { 1.0 } else { 0.0 }).unwrap();
        let lab = components(&g, 0.5);
        let far = g.lattice().index(&[-2, -2]).unwrap();
        assert!(chemical_distance(&g, &lab, g.lattice().origin(), far).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let f = sample_field(2, 2, &ConductanceLaw::Homogeneous { value: 1.0 }, 0).unwrap();
        let mut buf = Vec::new();
        components(&f, 0.5).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "alpha,comp_id,size,touches_boundary\n0.5,0,25,true\n");
    }
}
