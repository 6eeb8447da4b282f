//! Isoperimetry of reversible chains on clusters: flows `Q`, conductances
//! `Φ_S`, the profile `Φ(r)`, the evolving-set step bound, sampled
//! isoperimetric ratios and the block events `G_N`.

mod compare;
mod enumerate;
mod percolation;
mod profile;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{bond_open, ClusterLabeling};
use crate::coarse::{hat_chain, HatChain};
use crate::env::Environment;
use crate::error::{RcmError, Result};
use crate::scalar::Scalar;

pub use compare::{compare_hat_tilde, ComparisonReport};
pub use enumerate::{connected_subsets, grow_connected};
pub use percolation::{
    boundary_ratio, check_isoperimetry, gn_event, gn_probability, write_gn_csv, write_iso_csv, IsoCheck,
    IsoParams,
};
pub use profile::{morris_peres_n, profile, MorrisPeres, ProfileEstimate, ProfileFn, ProfileMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    /// `P_ω` with `π_ω`.
    Plain,
    /// `P̂_ω²` on the strong component with `π_ω`.
    HatSquared,
    /// `P̃_ω²` on the strong component with `π̃_ω`.
    TildeSquared,
    /// Built from explicit rows.
    Custom,
}

/// A reversible chain on a finite state space of lattice sites.
#[derive(Clone, Debug)]
pub struct ChainView<S> {
    kind: ChainKind,
    lazy: Option<f64>,
    states: Vec<usize>,
    index: HashMap<usize, usize>,
    rows: Vec<Vec<(usize, S)>>,
    weights: Vec<S>,
    adjacency: Vec<Vec<usize>>,
}

fn index_of(states: &[usize]) -> HashMap<usize, usize> {
    states.iter().enumerate().map(|(i, &s)| (s, i)).collect()
}

fn square<S: Scalar>(rows: &[Vec<(usize, S)>]) -> Vec<Vec<(usize, S)>> {
    rows.iter()
        .map(|row| {
            let mut acc: std::collections::BTreeMap<usize, S> = Default::default();
            for (j, p) in row {
                for (k, q) in &rows[*j] {
                    let e = acc.entry(*k).or_insert_with(S::zero);
                    *e = e.clone() + p.clone() * q.clone();
                }
            }
            acc.into_iter().collect()
        })
        .collect()
}

/// Sites of the largest component of `strong`, in index order.
pub fn strong_sites(strong: &ClusterLabeling) -> Vec<usize> {
    match strong.largest() {
        Some(c) => strong.sites_of(c),
        None => Vec::new(),
    }
}

/// Neighbours of each state joined by a bond passing `keep`.
fn lattice_adjacency<E: Environment + ?Sized>(
    field: &E,
    states: &[usize],
    index: &HashMap<usize, usize>,
    keep: impl Fn(f64) -> bool,
) -> Vec<Vec<usize>> {
    states
        .iter()
        .map(|&s| {
            field
                .open_neighbors(s)
                .into_iter()
                .filter(|(_, w)| keep(*w))
                .filter_map(|(y, _)| index.get(&y).copied())
                .collect()
        })
        .collect()
}

impl<S: Scalar> ChainView<S> {
    /// `P_ω` on `states`; transitions out of `states` leave the chain.
    pub fn plain<E: Environment + ?Sized>(field: &E, states: &[usize]) -> Self {
        let index = index_of(states);
        let mut rows = Vec::with_capacity(states.len());
        let mut weights = Vec::with_capacity(states.len());
        for &s in states {
            let nbs = field.open_neighbors(s);
            let pi = nbs.iter().fold(S::zero(), |a, (_, w)| a + S::from_f64_value(*w));
            let row = nbs
                .iter()
                .filter_map(|(y, w)| index.get(y).map(|&j| (j, S::from_f64_value(*w) / pi.clone())))
                .collect();
            rows.push(row);
            weights.push(pi);
        }
        let adjacency = lattice_adjacency(field, states, &index, |_| true);
        Self {
            kind: ChainKind::Plain,
            lazy: None,
            states: states.to_vec(),
            index,
            rows,
            weights,
            adjacency,
        }
    }

    /// `P̃²` with weights `π̃` on the largest component of `strong`.
    pub fn tilde_squared<E: Environment + ?Sized>(field: &E, strong: &ClusterLabeling) -> Self {
        let alpha = strong.alpha();
        let states = strong_sites(strong);
        let index = index_of(&states);
        let mut one = Vec::with_capacity(states.len());
        let mut weights = Vec::with_capacity(states.len());
        for &s in &states {
            let nbs: Vec<(usize, f64)> = field
                .open_neighbors(s)
                .into_iter()
                .filter(|(_, w)| bond_open(*w, alpha))
                .collect();
            let pi = nbs.iter().fold(S::zero(), |a, (_, w)| a + S::from_f64_value(*w));
            one.push(
                nbs.iter()
                    .map(|(y, w)| (index[y], S::from_f64_value(*w) / pi.clone()))
                    .collect(),
            );
            weights.push(pi);
        }
        let adjacency = lattice_adjacency(field, &states, &index, |w| bond_open(w, alpha));
        Self {
            kind: ChainKind::TildeSquared,
            lazy: None,
            rows: square(&one),
            states,
            index,
            weights,
            adjacency,
        }
    }

    /// `P̂²` with weights `π` on the largest component of `strong`.
    pub fn hat_squared<E: Environment + ?Sized>(field: &E, strong: &ClusterLabeling) -> Result<Self> {
        let states = strong_sites(strong);
        let index = index_of(&states);
        let hats: Vec<HatChain<S>> = states
            .iter()
            .map(|&s| hat_chain(field, strong, s))
            .collect::<Result<_>>()?;
        let mut one = Vec::with_capacity(states.len());
        let mut weights = Vec::with_capacity(states.len());
        for h in hats {
            one.push(h.row.iter().map(|(y, p)| (index[y], p.clone())).collect());
            weights.push(h.pi);
        }
        let alpha = strong.alpha();
        let adjacency = lattice_adjacency(field, &states, &index, |w| bond_open(w, alpha));
        Ok(Self {
            kind: ChainKind::HatSquared,
            lazy: None,
            rows: square(&one),
            states,
            index,
            weights,
            adjacency,
        })
    }

    /// Chain from explicit rows over `states` (state indices in rows).
    /// Adjacency is the support of the rows.
    pub fn from_rows(states: Vec<usize>, rows: Vec<Vec<(usize, S)>>, weights: Vec<S>) -> Result<Self> {
        if rows.len() != states.len() || weights.len() != states.len() {
            return Err(RcmError::InvalidArgument("rows, weights and states differ in length".into()));
        }
        let adjacency = rows
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().map(|(j, _)| *j).filter(|j| *j != i).collect())
            .collect();
        Ok(Self {
            kind: ChainKind::Custom,
            lazy: None,
            index: index_of(&states),
            states,
            rows,
            weights,
            adjacency,
        })
    }

    /// `γ I + (1 − γ) P`, same weights.
    pub fn lazy(&self, gamma: f64) -> Self {
        let g = S::from_f64_value(gamma);
        let keep = S::one() - g.clone();
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut out: Vec<(usize, S)> = row.iter().map(|(j, p)| (*j, keep.clone() * p.clone())).collect();
                match out.iter_mut().find(|(j, _)| *j == i) {
                    Some(e) => e.1 = e.1.clone() + g.clone(),
                    None => out.push((i, g.clone())),
                }
                out.sort_by_key(|(j, _)| *j);
                out
            })
            .collect();
        Self {
            lazy: Some(gamma),
            rows,
            ..self.clone()
        }
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    pub fn laziness(&self) -> Option<f64> {
        self.lazy
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn weight(&self, i: usize) -> &S {
        &self.weights[i]
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn row(&self, i: usize) -> &[(usize, S)] {
        &self.rows[i]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn total_weight(&self) -> S {
        self.weights.iter().fold(S::zero(), |a, w| a + w.clone())
    }

    pub fn state_of(&self, site: usize) -> Option<usize> {
        self.index.get(&site).copied()
    }

    /// Largest `|Σ_x π(x) P(x, y) − π(y)|`.
    pub fn stationarity_residual(&self) -> f64 {
        let mut flow = vec![S::zero(); self.len()];
        for (x, row) in self.rows.iter().enumerate() {
            for (y, p) in row {
                flow[*y] = flow[*y].clone() + self.weights[x].clone() * p.clone();
            }
        }
        flow.iter()
            .zip(&self.weights)
            .map(|(f, w)| (f.clone() - w.clone()).as_f64().abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|π(x)P(x,y) − π(y)P(y,x)|`.
    pub fn reversibility_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, row) in self.rows.iter().enumerate() {
            for (y, p) in row {
                let back = self.rows[*y]
                    .iter()
                    .find(|(k, _)| *k == x)
                    .map_or(S::zero(), |(_, q)| q.clone());
                let d = self.weights[x].clone() * p.clone() - self.weights[*y].clone() * back;
                worst = worst.max(d.as_f64().abs());
            }
        }
        worst
    }

    /// Membership mask of a set of state indices.
    fn mask(&self, set: &[usize]) -> Vec<bool> {
        let mut m = vec![false; self.len()];
        for &i in set {
            m[i] = true;
        }
        m
    }

    /// `(π(Λ), Q(Λ, Λ), Q(Λ, Λ^c))` for state indices.
    pub(crate) fn flows(&self, set: &[usize]) -> (S, S, S) {
        let inside = self.mask(set);
        let mut pi = S::zero();
        let mut q_in = S::zero();
        let mut q_out = S::zero();
        for &x in set {
            let w = self.weights[x].clone();
            pi = pi + w.clone();
            let mut stay = S::zero();
            for (y, p) in &self.rows[x] {
                if inside[*y] {
                    stay = stay + p.clone();
                }
            }
            // Mass the row sends outside the state space also leaves Λ.
            let leave = S::one() - stay.clone();
            q_in = q_in + w.clone() * stay;
            q_out = q_out + w * leave;
        }
        (pi, q_in, q_out)
    }

    pub(crate) fn boundary_edges(&self, set: &[usize]) -> usize {
        let inside = self.mask(set);
        set.iter()
            .map(|&x| self.adjacency[x].iter().filter(|y| !inside[**y]).count())
            .sum()
    }

    /// State indices of `sites`, or an error if one is not a state.
    pub fn states_of(&self, sites: &[usize]) -> Result<Vec<usize>> {
        sites
            .iter()
            .map(|s| self.state_of(*s).ok_or(RcmError::NotInStateSpace))
            .collect()
    }
}

/// Flow and conductance of a set `Λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CutRecord<S> {
    pub size: usize,
    pub pi: S,
    pub q_inside: S,
    pub q_out: S,
    pub phi: S,
    /// Graph edges from `Λ` to the rest of the state space.
    pub boundary_edges: usize,
}

/// `Q(Λ, Λ^c)`, `π(Λ)` and `Φ_Λ` for a set of sites.
pub fn cut_stats<S: Scalar>(chain: &ChainView<S>, sites: &[usize]) -> Result<CutRecord<S>> {
    if sites.is_empty() {
        return Err(RcmError::InvalidArgument("empty set".into()));
    }
    let mut set = chain.states_of(sites)?;
    set.sort_unstable();
    set.dedup();
    let (pi, q_inside, q_out) = chain.flows(&set);
    if pi.is_zero() {
        return Err(RcmError::InvalidArgument("set has zero weight".into()));
    }
    Ok(CutRecord {
        size: set.len(),
        phi: q_out.clone() / pi.clone(),
        boundary_edges: chain.boundary_edges(&set),
        pi,
        q_inside,
        q_out,
    })
}
