//! Geometry of the finite box `[-L, L]^d ∩ Z^d` with free boundary.
//!
//! Sites are addressed by a dense index with axis 0 fastest. Bond slots are
//! `d * site + axis` for the bond `(site, site + e_axis)`; slots whose upper
//! endpoint would leave the box exist in storage but are never bonds.

use serde::{Deserialize, Serialize};

use crate::error::{RcmError, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    radius: u32,
    side: usize,
    strides: Vec<usize>,
    sites: usize,
}

impl Lattice {
    pub fn new(dim: usize, radius: u32) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(RcmError::InvalidLattice(format!(
                "dimension {dim} outside 1..={MAX_DIM}"
            )));
        }
        let side = 2 * radius as usize + 1;
        let mut strides = Vec::with_capacity(dim);
        let mut acc: usize = 1;
        for _ in 0..dim {
            strides.push(acc);
            acc = acc
                .checked_mul(side)
                .ok_or_else(|| RcmError::InvalidLattice("box too large".into()))?;
        }
        Ok(Self {
            dim,
            radius,
            side,
            strides,
            sites: acc,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn radius(&self) -> u32 {
        self.radius
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    #[inline]
    pub fn site_count(&self) -> usize {
        self.sites
    }

    /// Number of slots in a bond store (`d` per site).
    #[inline]
    pub fn slot_count(&self) -> usize {
        self.sites * self.dim
    }

    /// Number of nearest-neighbour bonds inside the box.
    pub fn edge_count(&self) -> usize {
        let l2 = 2 * self.radius as usize;
        self.dim * self.side.pow(self.dim as u32 - 1) * l2
    }

    pub fn contains(&self, x: &[i32]) -> bool {
        x.len() == self.dim && x.iter().all(|&c| c.unsigned_abs() <= self.radius)
    }

    pub fn index(&self, x: &[i32]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let r = self.radius as i64;
        Some(
            x.iter()
                .zip(&self.strides)
                .map(|(&c, &s)| (c as i64 + r) as usize * s)
                .sum(),
        )
    }

    pub fn index_or_err(&self, x: &[i32]) -> Result<usize> {
        self.index(x).ok_or_else(|| RcmError::OutOfBox(x.to_vec()))
    }

    pub fn origin(&self) -> usize {
        self.index(&vec![0; self.dim]).expect("origin in box")
    }

    #[inline]
    pub fn coord(&self, idx: usize, axis: usize) -> i32 {
        ((idx / self.strides[axis]) % self.side) as i32 - self.radius as i32
    }

    pub fn coords(&self, idx: usize) -> Vec<i32> {
        (0..self.dim).map(|a| self.coord(idx, a)).collect()
    }

    /// Coordinates into a stack buffer; only the first `dim` entries are set.
    #[inline]
    pub fn coords_into(&self, idx: usize, buf: &mut [i32; MAX_DIM]) {
        let mut rest = idx;
        let r = self.radius as i32;
        for slot in buf.iter_mut().take(self.dim) {
            *slot = (rest % self.side) as i32 - r;
            rest /= self.side;
        }
    }

    /// Neighbour of `idx` one step along `axis` in direction `up`.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, up: bool) -> Option<usize> {
        let c = self.coord(idx, axis);
        let r = self.radius as i32;
        if up {
            (c < r).then(|| idx + self.strides[axis])
        } else {
            (c > -r).then(|| idx - self.strides[axis])
        }
    }

    /// Bond slot for the bond between `idx` and its neighbour along `axis`.
    #[inline]
    pub fn bond_slot(&self, idx: usize, axis: usize, up: bool) -> Option<usize> {
        if up {
            self.neighbor(idx, axis, true).map(|_| idx * self.dim + axis)
        } else {
            self.neighbor(idx, axis, false)
                .map(|lo| lo * self.dim + axis)
        }
    }

    /// All in-box neighbours of `idx` as `(neighbour, slot)`, in the fixed
    /// order `(axis 0 down, axis 0 up, axis 1 down, ...)`.
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.dim).flat_map(move |axis| {
            [false, true].into_iter().filter_map(move |up| {
                let nb = self.neighbor(idx, axis, up)?;
                let slot = if up { idx * self.dim + axis } else { nb * self.dim + axis };
                Some((nb, slot))
            })
        })
    }

    /// ℓ∞ distance from `idx` to the outer face of the box.
    pub fn boundary_distance(&self, idx: usize) -> u32 {
        let m = (0..self.dim)
            .map(|a| self.coord(idx, a).unsigned_abs())
            .max()
            .unwrap_or(0);
        self.radius - m
    }

    pub fn on_boundary(&self, idx: usize) -> bool {
        self.boundary_distance(idx) == 0
    }

    /// Whether the slot stores a real bond.
    #[inline]
    pub fn slot_is_bond(&self, slot: usize) -> bool {
        let site = slot / self.dim;
        let axis = slot % self.dim;
        self.coord(site, axis) < self.radius as i32
    }
}

pub fn l1_norm(x: &[i32]) -> u32 {
    x.iter().map(|c| c.unsigned_abs()).sum()
}

pub fn linf_norm(x: &[i32]) -> u32 {
    x.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
}

pub fn euclidean_norm(x: &[i32]) -> f64 {
    x.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip_and_neighbors() {
        let lat = Lattice::new(3, 2).unwrap();
        for idx in [0, 17, lat.site_count() - 1] {
            assert_eq!(lat.index(&lat.coords(idx)), Some(idx));
        }
        let o = lat.origin();
        assert_eq!(lat.coords(o), vec![0, 0, 0]);
        assert_eq!(lat.neighbors(o).count(), 6);
        let corner = lat.index(&[2, 2, 2]).unwrap();
        assert_eq!(lat.neighbors(corner).count(), 3);
    }

    #[test]
    fn edge_count_matches_slot_census() {
        for (d, l) in [(2, 1), (2, 3), (3, 2), (4, 1)] {
            let lat = Lattice::new(d, l).unwrap();
            let bonds = (0..lat.slot_count()).filter(|&s| lat.slot_is_bond(s)).count();
            assert_eq!(bonds, lat.edge_count());
        }
        assert_eq!(Lattice::new(2, 1).unwrap().edge_count(), 12);
    }

    #[test]
    fn slots_are_symmetric() {
        let lat = Lattice::new(2, 3).unwrap();
        for idx in 0..lat.site_count() {
            for (nb, slot) in lat.neighbors(idx) {
                assert!(lat.neighbors(nb).any(|(back, s)| back == idx && s == slot));
            }
        }
    }
}
