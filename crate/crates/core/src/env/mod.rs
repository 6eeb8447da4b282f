//! Conductance laws, finite-box environments and the local transition
//! structure of the walk.

mod container;
mod field;
mod law;

pub use container::{law_from_json, law_to_json, read_field, write_field, MAGIC, VERSION};
pub use field::{
    sample_field, ConductanceField, Environment, FieldDescriptor, LocalStep, Planting,
    ProceduralField,
    wedge_site_value,
};
pub use law::{bond_threshold, zeta, ConductanceLaw, SparseScale, ValueTable, DYADIC_MAX_LEVEL};

#[cfg(test)]
mod tests {
    use super::*;

    fn homogeneous(d: usize, l: u32) -> ConductanceField {
        sample_field(d, l, &ConductanceLaw::Homogeneous { value: 1.0 }, 1).unwrap()
    }

    #[test]
    fn small_homogeneous_box_has_twelve_unit_bonds() {
        let f = homogeneous(2, 1);
        let lat = f.lattice();
        let bonds: Vec<f64> = (0..lat.slot_count())
            .filter(|&s| lat.slot_is_bond(s))
            .map(|s| f.slot_value(s))
            .collect();
        assert_eq!(bonds.len(), 12);
        assert!(bonds.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn full_percolation_equals_homogeneous() {
        let a = sample_field(2, 5, &ConductanceLaw::BernoulliPerc { p: 1.0 }, 9).unwrap();
        let b = homogeneous(2, 5);
        let lat = a.lattice();
        for s in 0..lat.slot_count() {
            assert_eq!(a.slot_value(s), b.slot_value(s));
        }
    }

    #[test]
    fn step_distribution_cases() {
        let f = homogeneous(2, 2);
        let step = f.step_distribution(&[0, 0]).unwrap();
        assert_eq!(step.neighbors.len(), 4);
        assert!(step.probabilities().iter().all(|(_, p)| (*p - 0.25).abs() < 1e-15));

        let g = ConductanceField::from_fn(2, 2, |x, axis| match (x, axis) {
            ([0, 0], 0) => 1.0,
            ([-1, 0], 0) => 1.0,
            ([0, 0], 1) => 0.5,
            ([0, -1], 1) => 0.5,
            _ => 0.0,
        })
        .unwrap();
        let step = g.step_distribution(&[0, 0]).unwrap();
        let mut probs: Vec<f64> = step.probabilities().into_iter().map(|(_, p)| p).collect();
        probs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let want = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        for (p, w) in probs.iter().zip(want) {
            assert!((p - w).abs() < 1e-15);
        }

        let iso = ConductanceField::from_fn(2, 2, |_, _| 0.0).unwrap();
        assert!(matches!(
            iso.step_distribution(&[0, 0]),
            Err(crate::error::RcmError::IsolatedSite(_))
        ));
    }

    #[test]
    fn wedge_bonds_are_site_minima() {
        let law = ConductanceLaw::WedgeMin {
            values: vec![1.0, 0.25, 0.01],
            probs: vec![0.5, 0.3, 0.2],
        };
        let f = sample_field(2, 6, &law, 4).unwrap();
        let lat = f.lattice();
        for s in 0..lat.site_count() {
            let x = lat.coords(s);
            let vx = wedge_site_value(&law, 4, &x).unwrap().unwrap();
            for (nb, slot) in lat.neighbors(s) {
                let vy = wedge_site_value(&law, 4, &lat.coords(nb)).unwrap().unwrap();
                assert_eq!(f.slot_value(slot), vx.min(vy));
            }
        }
    }

    #[test]
    fn procedural_field_matches_stored_field() {
        let law = ConductanceLaw::TwoValue { p: 0.6, n: 20.0 };
        let stored = sample_field(3, 4, &law, 77).unwrap();
        let lazy = ProceduralField::new(3, 4, &law, 77).unwrap();
        let lat = stored.lattice().clone();
        for s in 0..lat.site_count() {
            for a in 0..3 {
                for up in [false, true] {
                    assert_eq!(stored.bond(s, a, up), lazy.bond(s, a, up));
                }
            }
        }
    }

    #[test]
    fn nested_boxes_share_bonds() {
        let law = ConductanceLaw::BernoulliPerc { p: 0.5 };
        let small = sample_field(2, 3, &law, 5).unwrap();
        let big = sample_field(2, 7, &law, 5).unwrap();
        for s in 0..small.lattice().site_count() {
            let x = small.lattice().coords(s);
            let t = big.lattice().index(&x).unwrap();
            for a in 0..2 {
                if small.lattice().neighbor(s, a, true).is_some() {
                    assert_eq!(small.bond(s, a, true), big.bond(t, a, true));
                }
            }
        }
    }

    #[test]
    fn planting_writes_the_trap_pattern() {
        let f = homogeneous(2, 5);
        let g = f.plant_trap(&[1, 0], 0.01, 0).unwrap();
        let lat = g.lattice();
        let y = lat.index(&[2, 0]).unwrap();
        let z = lat.index(&[3, 0]).unwrap();
        assert_eq!(g.conductance_between(y, z), 1.0);
        for s in [y, z] {
            for (nb, _) in lat.neighbors(s) {
                if nb != y && nb != z {
                    assert_eq!(g.conductance_between(s, nb), 0.01);
                }
            }
        }
        assert_eq!(g.plantings().len(), 1);
        assert!(f.plant_trap(&[3, 0], 0.01, 0).is_err());
    }

    #[test]
    fn container_roundtrip() {
        let law = ConductanceLaw::DyadicPolyLog { p1: 0.7, epsilon: 0.5 };
        let f = sample_field(2, 8, &law, 123).unwrap().plant_trap(&[0, 0], 0.125, 1).unwrap();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        let g = read_field(buf.as_slice()).unwrap();
        assert_eq!(g.descriptor(), f.descriptor());
        assert_eq!(g.fingerprint(), f.fingerprint());
        buf[0] = b'X';
        assert!(read_field(buf.as_slice()).is_err());
    }

    #[test]
    fn law_json_roundtrip() {
        let law = ConductanceLaw::TwoValue { p: 0.7, n: 100.0 };
        let text = law_to_json(&law).unwrap();
        assert_eq!(text, r#"{"kind":"two_value","p":0.7,"n":100.0}"#);
        assert_eq!(law_from_json(&text).unwrap(), law);
        assert!(law_from_json(r#"{"kind":"bernoulli_perc","p":1.5}"#).is_err());
    }
}
