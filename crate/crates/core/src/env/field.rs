use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::law::{ConductanceLaw, ValueTable};
use crate::error::{RcmError, Result};
use crate::lattice::{Lattice, MAX_DIM};
use crate::rng::{counter_uniform, domain, lattice_key};

/// Read access to bond conductances of a box environment.
pub trait Environment: Sync {
    fn lattice(&self) -> &Lattice;

    /// Conductance of the bond from `site` along `axis` (upwards when `up`);
    /// zero when the bond would leave the box.
    fn bond(&self, site: usize, axis: usize, up: bool) -> f64;

    /// `π_ω(x) = Σ_y ω_xy`.
    fn pi(&self, site: usize) -> f64 {
        let d = self.lattice().dim();
        (0..d)
            .map(|a| self.bond(site, a, false) + self.bond(site, a, true))
            .sum()
    }

    /// Short law identifier for output files.
    fn law_label(&self) -> String {
        "custom".into()
    }

    fn field_seed(&self) -> u64 {
        0
    }

    /// Neighbours with positive conductance, as `(neighbour, ω)`.
    fn open_neighbors(&self, site: usize) -> Vec<(usize, f64)> {
        let lat = self.lattice();
        let mut out = Vec::with_capacity(2 * lat.dim());
        for axis in 0..lat.dim() {
            for up in [false, true] {
                let w = self.bond(site, axis, up);
                if w > 0.0 {
                    if let Some(nb) = lat.neighbor(site, axis, up) {
                        out.push((nb, w));
                    }
                }
            }
        }
        out
    }
}

/// A trap planted by [`ConductanceField::plant_trap`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Planting {
    pub anchor: Vec<i32>,
    pub axis: usize,
    pub weak: f64,
}

/// Law and edits that produced a field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    /// `None` for hand-built fields.
    pub law: Option<ConductanceLaw>,
    pub seed: u64,
    #[serde(default)]
    pub plantings: Vec<Planting>,
}

/// Finite-box realisation of bond conductances, stored as one palette code
/// per bond slot. Code 0 is conductance zero (and every non-bond slot).
#[derive(Clone, Debug, PartialEq)]
pub struct ConductanceField {
    lattice: Lattice,
    descriptor: FieldDescriptor,
    palette: Vec<f64>,
    codes: Vec<u8>,
}

/// Maps table entries onto palette codes, sharing code 0 for zero.
fn build_palette(table: &ValueTable) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut palette = vec![0.0];
    let mut code_of = Vec::with_capacity(table.values().len());
    for &v in table.values() {
        let code = match palette.iter().position(|&p| p == v) {
            Some(c) => c,
            None => {
                palette.push(v);
                palette.len() - 1
            }
        };
        if code > u8::MAX as usize {
            return Err(RcmError::InvalidLaw("more than 255 distinct conductances".into()));
        }
        code_of.push(code as u8);
    }
    Ok((palette, code_of))
}

/// Per-bond sampler shared by the stored and procedural fields.
#[derive(Clone, Debug)]
struct BondSampler {
    seed: u64,
    table: ValueTable,
    code_of: Vec<u8>,
    wedge: bool,
}

impl BondSampler {
    #[inline]
    fn site_index(&self, coords: &[i32]) -> usize {
        let u = counter_uniform(self.seed, domain::SITE, lattice_key(coords, 0));
        self.table.sample_index(u)
    }

    /// Palette code of the bond `(x, x + e_axis)`; `coords` holds `x` and is
    /// restored before returning.
    #[inline]
    fn code(&self, coords: &mut [i32], axis: usize) -> u8 {
        if self.wedge {
            let a = self.site_index(coords);
            coords[axis] += 1;
            let b = self.site_index(coords);
            coords[axis] -= 1;
            let values = self.table.values();
            let pick = if values[b] < values[a] { b } else { a };
            self.code_of[pick]
        } else {
            let key = lattice_key(coords, 1 + axis as u64);
            let u = counter_uniform(self.seed, domain::EDGE, key);
            self.code_of[self.table.sample_index(u)]
        }
    }
}

impl ConductanceField {
    /// Samples every bond of `[-radius, radius]^dim` i.i.d. from `law`.
    ///
    /// Each bond value is a pure function of `(seed, bond coordinates)`, so
    /// the result is bit-identical for any thread count and any box that
    /// contains the bond.
    pub fn sample(dim: usize, radius: u32, law: &ConductanceLaw, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(RcmError::InvalidLattice("dimension must be at least 2".into()));
        }
        if radius < 1 {
            return Err(RcmError::InvalidLattice("box radius must be at least 1".into()));
        }
        let lattice = Lattice::new(dim, radius)?;
        let table = law.table()?;
        for w in law.warnings(dim) {
            log::warn!("{w}");
        }
        let (palette, code_of) = build_palette(&table)?;
        let sampler = BondSampler {
            seed,
            table,
            code_of,
            wedge: law.is_wedge(),
        };
        let side = lattice.side();
        let r = radius as i32;
        let mut codes = vec![0u8; lattice.slot_count()];
        codes
            .par_chunks_mut(side * dim)
            .enumerate()
            .for_each(|(row, chunk)| {
                let mut coords = [0i32; MAX_DIM];
                lattice.coords_into(row * side, &mut coords);
                for i in 0..side {
                    coords[0] = i as i32 - r;
                    for axis in 0..dim {
                        if coords[axis] < r {
                            chunk[i * dim + axis] = sampler.code(&mut coords[..dim], axis);
                        }
                    }
                }
            });
        Ok(Self {
            lattice,
            descriptor: FieldDescriptor {
                law: Some(law.clone()),
                seed,
                plantings: Vec::new(),
            },
            palette,
            codes,
        })
    }

    /// Hand-built field: `value(x, axis)` gives the bond `(x, x + e_axis)`.
    pub fn from_fn(dim: usize, radius: u32, value: impl Fn(&[i32], usize) -> f64) -> Result<Self> {
        let lattice = Lattice::new(dim, radius)?;
        let mut field = Self {
            codes: vec![0; lattice.slot_count()],
            lattice,
            descriptor: FieldDescriptor {
                law: None,
                seed: 0,
                plantings: Vec::new(),
            },
            palette: vec![0.0],
        };
        for site in 0..field.lattice.site_count() {
            let x = field.lattice.coords(site);
            for axis in 0..dim {
                if field.lattice.neighbor(site, axis, true).is_some() {
                    field.set_slot(site * dim + axis, value(&x, axis))?;
                }
            }
        }
        Ok(field)
    }

    pub(crate) fn from_parts(
        lattice: Lattice,
        descriptor: FieldDescriptor,
        palette: Vec<f64>,
        codes: Vec<u8>,
    ) -> Self {
        Self {
            lattice,
            descriptor,
            palette,
            codes,
        }
    }

    pub fn descriptor(&self) -> &FieldDescriptor {
        &self.descriptor
    }

    pub fn law(&self) -> Option<&ConductanceLaw> {
        self.descriptor.law.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.descriptor.seed
    }

    pub fn plantings(&self) -> &[Planting] {
        &self.descriptor.plantings
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn radius(&self) -> u32 {
        self.lattice.radius()
    }

    pub fn palette(&self) -> &[f64] {
        &self.palette
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    #[inline]
    pub fn slot_value(&self, slot: usize) -> f64 {
        self.palette[self.codes[slot] as usize]
    }

    fn code_for(&mut self, value: f64) -> Result<u8> {
        if !(0.0..=1.0).contains(&value) {
            return Err(RcmError::InvalidArgument(format!(
                "conductance {value} outside [0,1]"
            )));
        }
        if let Some(c) = self.palette.iter().position(|&p| p == value) {
            return Ok(c as u8);
        }
        if self.palette.len() > u8::MAX as usize {
            return Err(RcmError::InvalidArgument("palette full".into()));
        }
        self.palette.push(value);
        Ok((self.palette.len() - 1) as u8)
    }

    fn set_slot(&mut self, slot: usize, value: f64) -> Result<()> {
        let code = self.code_for(value)?;
        self.codes[slot] = code;
        Ok(())
    }

    /// Overwrites the bond between `site` and its neighbour along `axis`.
    pub fn set_bond(&mut self, site: usize, axis: usize, up: bool, value: f64) -> Result<()> {
        let slot = self
            .lattice
            .bond_slot(site, axis, up)
            .ok_or_else(|| RcmError::OutOfBox(self.lattice.coords(site)))?;
        self.set_slot(slot, value)
    }

    /// Conductance between two sites (zero unless they are neighbours).
    pub fn conductance_between(&self, a: usize, b: usize) -> f64 {
        self.lattice
            .neighbors(a)
            .find(|(nb, _)| *nb == b)
            .map_or(0.0, |(_, slot)| self.slot_value(slot))
    }

    /// Order-independent content hash of the bond store.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::rng::counter_u64(self.lattice.dim() as u64, domain::CONFIG, self.radius() as u64);
        for (i, &code) in self.codes.iter().enumerate() {
            if code != 0 {
                let bits = self.palette[code as usize].to_bits();
                h ^= crate::rng::counter_u64(bits, domain::CONFIG, i as u64);
            }
        }
        h
    }

    /// Transition structure at `x`.
    pub fn step_distribution(&self, x: &[i32]) -> Result<LocalStep> {
        let site = self.lattice.index_or_err(x)?;
        let neighbors: Vec<(Vec<i32>, f64)> = self
            .open_neighbors(site)
            .into_iter()
            .map(|(nb, w)| (self.lattice.coords(nb), w))
            .collect();
        let pi: f64 = neighbors.iter().map(|(_, w)| w).sum();
        if pi <= 0.0 {
            return Err(RcmError::IsolatedSite(x.to_vec()));
        }
        Ok(LocalStep {
            site: x.to_vec(),
            neighbors,
            pi,
        })
    }

    /// Plants a trap `x, y = x + e_axis, z = x + 2 e_axis`: `ω_yz = 1` and
    /// every other bond at `y` or `z` (including `xy`) set to `weak`.
    pub fn plant_trap_in_place(&mut self, x: &[i32], weak: f64, axis: usize) -> Result<()> {
        if !(weak > 0.0 && weak < 1.0) {
            return Err(RcmError::InvalidArgument(format!("weak value {weak} outside (0,1)")));
        }
        if axis >= self.dim() {
            return Err(RcmError::InvalidArgument(format!("axis {axis} out of range")));
        }
        let lat = self.lattice.clone();
        let ix = lat.index_or_err(x)?;
        let mut z_coords = x.to_vec();
        z_coords[axis] += 2;
        let iz = lat.index_or_err(&z_coords)?;
        let iy = ix + lat.stride(axis);
        if [ix, iy, iz].iter().any(|&s| lat.boundary_distance(s) == 0) {
            return Err(RcmError::InvalidArgument(format!(
                "trap at {x:?} along axis {axis} touches the box boundary"
            )));
        }
        for site in [iy, iz] {
            for (_, slot) in lat.neighbors(site) {
                self.set_slot(slot, weak)?;
            }
        }
        self.set_bond(iy, axis, true, 1.0)?;
        self.descriptor.plantings.push(Planting {
            anchor: x.to_vec(),
            axis,
            weak,
        });
        Ok(())
    }

    pub fn plant_trap(&self, x: &[i32], weak: f64, axis: usize) -> Result<Self> {
        let mut out = self.clone();
        out.plant_trap_in_place(x, weak, axis)?;
        Ok(out)
    }
}

impl Environment for ConductanceField {
    #[inline]
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn law_label(&self) -> String {
        let base = self.descriptor.law.as_ref().map_or("custom".into(), |l| l.id());
        if self.descriptor.plantings.is_empty() {
            base
        } else {
            format!("{base}+{}traps", self.descriptor.plantings.len())
        }
    }

    fn field_seed(&self) -> u64 {
        self.descriptor.seed
    }

    #[inline]
    fn bond(&self, site: usize, axis: usize, up: bool) -> f64 {
        match self.lattice.bond_slot(site, axis, up) {
            Some(slot) => self.slot_value(slot),
            None => 0.0,
        }
    }
}

/// Field whose bonds are recomputed on demand from `(law, seed)` instead of
/// stored. Values agree bond-for-bond with [`ConductanceField::sample`].
#[derive(Clone, Debug)]
pub struct ProceduralField {
    lattice: Lattice,
    law: ConductanceLaw,
    sampler: BondSampler,
    palette: Vec<f64>,
}

impl ProceduralField {
    pub fn new(dim: usize, radius: u32, law: &ConductanceLaw, seed: u64) -> Result<Self> {
        if dim < 2 || radius < 1 {
            return Err(RcmError::InvalidLattice("need d ≥ 2 and L ≥ 1".into()));
        }
        let table = law.table()?;
        let (palette, code_of) = build_palette(&table)?;
        Ok(Self {
            lattice: Lattice::new(dim, radius)?,
            law: law.clone(),
            sampler: BondSampler {
                seed,
                table,
                code_of,
                wedge: law.is_wedge(),
            },
            palette,
        })
    }

    pub fn law(&self) -> &ConductanceLaw {
        &self.law
    }

    pub fn seed(&self) -> u64 {
        self.sampler.seed
    }
}

impl Environment for ProceduralField {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn law_label(&self) -> String {
        self.law.id()
    }

    fn field_seed(&self) -> u64 {
        self.sampler.seed
    }

    fn bond(&self, site: usize, axis: usize, up: bool) -> f64 {
        let lower = if up {
            if self.lattice.neighbor(site, axis, true).is_none() {
                return 0.0;
            }
            site
        } else {
            match self.lattice.neighbor(site, axis, false) {
                Some(lo) => lo,
                None => return 0.0,
            }
        };
        let mut coords = [0i32; MAX_DIM];
        self.lattice.coords_into(lower, &mut coords);
        let code = self.sampler.code(&mut coords[..self.lattice.dim()], axis);
        self.palette[code as usize]
    }
}

/// Site variable `ω(x)` of a [`ConductanceLaw::WedgeMin`] field with the
/// given seed. `None` for bond laws.
pub fn wedge_site_value(law: &ConductanceLaw, seed: u64, x: &[i32]) -> Result<Option<f64>> {
    if !law.is_wedge() {
        return Ok(None);
    }
    let table = law.table()?;
    let u = counter_uniform(seed, domain::SITE, lattice_key(x, 0));
    Ok(Some(table.values()[table.sample_index(u)]))
}

/// Local transition structure `P_ω(x, ·) = ω_x· / π_ω(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalStep {
    pub site: Vec<i32>,
    pub neighbors: Vec<(Vec<i32>, f64)>,
    pub pi: f64,
}

impl LocalStep {
    pub fn probabilities(&self) -> Vec<(Vec<i32>, f64)> {
        self.neighbors
            .iter()
            .map(|(y, w)| (y.clone(), w / self.pi))
            .collect()
    }
}

/// Samples a field; see [`ConductanceField::sample`].
pub fn sample_field(dim: usize, radius: u32, law: &ConductanceLaw, seed: u64) -> Result<ConductanceField> {
    ConductanceField::sample(dim, radius, law, seed)
}
