//! Property-based invariants: serialization round trips, involution, winding
//! exactness and degree additivity over randomized inputs.

use proptest::prelude::*;
use std::io::BufReader;

use twistlab::grid::{annulus_area, AnnulusGrid, ScalarField};
use twistlab::maps::{compose, make_twist_2d, make_twist_profile_even_n, PlanarMap, TwistProfile};
use twistlab::topology::degree;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn field_csv_round_trip_is_bit_exact(
        a in 0.2f64..2.0,
        width in 0.5f64..3.0,
        n_r in 3usize..12,
        n_t in 8usize..24,
        seed in any::<u32>(),
    ) {
        let grid = AnnulusGrid::new(a, a + width, n_r, n_t).unwrap();
        let mut state = seed as u64 | 1;
        let field = ScalarField::from_fn(grid, |r, t| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let noise = (state >> 11) as f64 / (1u64 << 53) as f64;
            (r * t.sin()).exp() * (noise - 0.5)
        });
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        let back = ScalarField::read_csv(BufReader::new(buf.as_slice())).unwrap();
        prop_assert_eq!(field, back);
    }

    #[test]
    fn profile_round_trip_and_involution(
        k in -6i64..=6,
        n_nodes in 3usize..40,
    ) {
        let p = make_twist_profile_even_n(1.0, 2.0, 4, k, n_nodes.max(3)).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = TwistProfile::read_csv(BufReader::new(buf.as_slice())).unwrap();
        prop_assert_eq!(&p, &back);
        // invert twice is bit-exact
        prop_assert_eq!(&p, &p.invert().invert());
        prop_assert_eq!(p.invert().winding(), -k);
    }

    #[test]
    fn quadrature_exact_on_constants(
        a in 0.3f64..2.0,
        width in 0.4f64..2.5,
        n_r in 3usize..40,
        n_t in 8usize..64,
        value in -5.0f64..5.0,
    ) {
        let grid = AnnulusGrid::new(a, a + width, n_r, n_t).unwrap();
        let f = ScalarField::constant(grid, value);
        let exact = value * annulus_area(a, a + width);
        let got = f.integrate().unwrap();
        prop_assert!((got - exact).abs() <= 1e-12 * exact.abs().max(1.0));
    }

    #[test]
    fn twist_degree_is_exact(k in -8i64..=8, n_t in 8usize..64) {
        let grid = AnnulusGrid::new(1.0, 2.0, 65, n_t).unwrap();
        let (map, _) = make_twist_2d(grid, k);
        let d = degree(&map).unwrap();
        prop_assert_eq!(d.k, k);
        prop_assert!(d.confidence < 1e-9);
    }

    #[test]
    fn composition_adds_degrees(k in -3i64..=3, j in -3i64..=3) {
        let grid = AnnulusGrid::new(1.0, 2.0, 33, 64).unwrap();
        let (tk, _) = make_twist_2d(grid, k);
        let (tj, _) = make_twist_2d(grid, j);
        let c = compose(&tk, &tj).unwrap();
        prop_assert_eq!(degree(&c).unwrap().k, k + j);
    }
}

#[test]
fn map_round_trip_is_bit_exact() {
    let grid = AnnulusGrid::new(1.0, 2.0, 9, 16).unwrap();
    let map = PlanarMap::from_fn(grid, |r, t| {
        ((r * 1.1).sin() * t.cos() + r, (t * 3.0).cos() * 0.1 + r * t.sin())
    });
    let mut buf = Vec::new();
    map.write_csv(&mut buf).unwrap();
    let back = PlanarMap::read_csv(BufReader::new(buf.as_slice())).unwrap();
    assert_eq!(map, back);
}
