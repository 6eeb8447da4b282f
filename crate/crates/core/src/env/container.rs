//! `RCMF` binary container for fields.
//!
//! Layout (little endian): magic `RCMF`, version `u16`, dimension `u8`,
//! radius `u32`, seed `u64`, descriptor length `u32` followed by the JSON
//! descriptor (law and plantings), bond count `u64`, then one `f64` per bond
//! in slot order (site-major, axis-minor).

use std::io::{Read, Write};

use super::field::{ConductanceField, FieldDescriptor};
use super::law::ConductanceLaw;
use crate::error::{RcmError, Result};
use crate::lattice::Lattice;

pub const MAGIC: &[u8; 4] = b"RCMF";
pub const VERSION: u16 = 1;

pub fn write_field<W: Write>(field: &ConductanceField, mut out: W) -> Result<()> {
    let lat = crate::env::Environment::lattice(field);
    let descriptor = serde_json::to_vec(field.descriptor())?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[lat.dim() as u8])?;
    out.write_all(&lat.radius().to_le_bytes())?;
    out.write_all(&field.seed().to_le_bytes())?;
    out.write_all(&(descriptor.len() as u32).to_le_bytes())?;
    out.write_all(&descriptor)?;
    out.write_all(&(lat.edge_count() as u64).to_le_bytes())?;
    for slot in (0..lat.slot_count()).filter(|&s| lat.slot_is_bond(s)) {
        out.write_all(&field.slot_value(slot).to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_field<R: Read>(mut input: R) -> Result<ConductanceField> {
    let magic: [u8; 4] = read_array(&mut input)?;
    if &magic != MAGIC {
        return Err(RcmError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut input)?);
    if version != VERSION {
        return Err(RcmError::Format(format!("unsupported version {version}")));
    }
    let [dim] = read_array::<1, _>(&mut input)?;
    let radius = u32::from_le_bytes(read_array(&mut input)?);
    let seed = u64::from_le_bytes(read_array(&mut input)?);
    let len = u32::from_le_bytes(read_array(&mut input)?) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let descriptor: FieldDescriptor = serde_json::from_slice(&json)?;
    if descriptor.seed != seed {
        return Err(RcmError::Format("seed in header and descriptor disagree".into()));
    }
    let lattice = Lattice::new(dim as usize, radius)?;
    let count = u64::from_le_bytes(read_array(&mut input)?) as usize;
    if count != lattice.edge_count() {
        return Err(RcmError::Format(format!(
            "bond count {count} does not match box ({})",
            lattice.edge_count()
        )));
    }
    let mut palette = vec![0.0f64];
    let mut codes = vec![0u8; lattice.slot_count()];
    for slot in (0..lattice.slot_count()).filter(|&s| lattice.slot_is_bond(s)) {
        let v = f64::from_le_bytes(read_array(&mut input)?);
        if !(0.0..=1.0).contains(&v) {
            return Err(RcmError::Format(format!("conductance {v} outside [0,1]")));
        }
        let code = match palette.iter().position(|&p| p.to_bits() == v.to_bits() || (p == 0.0 && v == 0.0)) {
            Some(c) => c,
            None => {
                if palette.len() > u8::MAX as usize {
                    return Err(RcmError::Format("more than 255 distinct values".into()));
                }
                palette.push(v);
                palette.len() - 1
            }
        };
        codes[slot] = code as u8;
    }
    Ok(ConductanceField::from_parts(lattice, descriptor, palette, codes))
}

/// Parses a JSON law descriptor as used in experiment configs.
pub fn law_from_json(text: &str) -> Result<ConductanceLaw> {
    let law: ConductanceLaw = serde_json::from_str(text)?;
    law.table()?;
    Ok(law)
}

pub fn law_to_json(law: &ConductanceLaw) -> Result<String> {
    Ok(serde_json::to_string(law)?)
}
