//! Winding-number degree of admissible maps and homotopy-class classification.
//!
//! The degree is computed by angle unwrapping of atan2(u2, u1) along each
//! radial line, which is exact whenever consecutive samples differ in angle by
//! less than pi. A quadrature of the integral form (u x u_r)/|u|^2 is kept as a
//! cross-check; it carries O(h^2) error and is never used for classification.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::maps::PlanarMap;

const DEGENERACY_EPS: f64 = 1e-12;

/// Outcome of a degree computation.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DegreeResult {
    /// The winding number.
    pub k: i64,
    /// Mean of the per-line unwrapped angle changes divided by 2 pi.
    pub raw: f64,
    /// |raw - k|; below 0.5 for an accepted classification.
    pub confidence: f64,
}

fn wrap_to_pi(d: f64) -> f64 {
    let mut d = d % TAU;
    if d > PI {
        d -= TAU;
    } else if d < -PI {
        d += TAU;
    }
    d
}

/// Unwrapped total angle change of u along the radial line theta_j, in turns.
fn line_winding(map: &PlanarMap, j: usize) -> f64 {
    let g = map.grid();
    let mut total = 0.0;
    let (x0, y0) = map.at(0, j);
    let mut prev = y0.atan2(x0);
    for i in 1..g.n_r() {
        let (x, y) = map.at(i, j);
        let phi = y.atan2(x);
        total += wrap_to_pi(phi - prev);
        prev = phi;
    }
    total / TAU
}

/// Winding-number degree of an admissible map.
///
/// Every radial line is unwrapped independently; the lines must agree on the
/// rounded integer (continuity makes the index independent of theta), otherwise
/// the map is declared under-resolved.
pub fn degree(map: &PlanarMap) -> Result<DegreeResult> {
    map.u1().check_finite()?;
    map.u2().check_finite()?;
    map.require_modulus(DEGENERACY_EPS)?;
    let n_t = map.grid().n_t();
    let mut raws = Vec::with_capacity(n_t);
    let mut votes = Vec::with_capacity(n_t);
    for j in 0..n_t {
        let w = line_winding(map, j);
        raws.push(w);
        votes.push(w.round() as i64);
    }
    let k = votes[0];
    if votes.iter().any(|&v| v != k) {
        let mut distinct: Vec<i64> = votes.clone();
        distinct.sort_unstable();
        distinct.dedup();
        return Err(Error::WindingDisagreement { votes: distinct });
    }
    let raw = raws.iter().sum::<f64>() / n_t as f64;
    Ok(DegreeResult {
        k,
        raw,
        confidence: (raw - k as f64).abs(),
    })
}

/// Quadrature of (1/2 pi) int_a^b (u x u_r)/|u|^2 dr averaged over the radial
/// lines: the integral form of the degree, reported as a cross-check.
pub fn degree_quadrature(map: &PlanarMap) -> Result<f64> {
    map.require_modulus(DEGENERACY_EPS)?;
    let g = *map.grid();
    let (u1r, _) = map.u1().grad_polar()?;
    let (u2r, _) = map.u2().grad_polar()?;
    let h = g.h_r();
    let mut mean = 0.0;
    for j in 0..g.n_t() {
        let mut acc = 0.0;
        for i in 0..g.n_r() {
            let (x, y) = map.at(i, j);
            let cross = x * u2r.at(i, j) - y * u1r.at(i, j);
            let w = if i == 0 || i == g.n_r() - 1 { 0.5 } else { 1.0 };
            acc += w * h * cross / (x * x + y * y);
        }
        mean += acc;
    }
    Ok(mean / (g.n_t() as f64 * TAU))
}

/// Two admissible maps are homotopic iff their degrees coincide.
pub fn same_class(u: &PlanarMap, v: &PlanarMap) -> Result<bool> {
    Ok(degree(u)?.k == degree(v)?.k)
}

/// Homotopy class of a twist loop in dimension n >= 3: the parity of k.
/// Odd k lands in the non-trivial class, even k in the trivial one.
pub fn loop_parity(profile: &crate::maps::TwistProfile) -> Result<u8> {
    let n = profile.dimension();
    if n < 3 {
        return Err(Error::Dimension {
            n,
            reason: "for n = 2 the classes are Z-valued; use degree instead".into(),
        });
    }
    Ok(profile.winding().rem_euclid(2) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AnnulusGrid;
    use crate::maps::{compose, make_flow_map, make_twist_2d, make_twist_profile_even_n, StreamSpec};
    use std::f64::consts::E;

    fn grid(n_r: usize, n_t: usize) -> AnnulusGrid {
        AnnulusGrid::new(1.0, 2.0, n_r, n_t).unwrap()
    }

    #[test]
    fn identity_has_degree_zero() {
        let g = grid(33, 32);
        let d = degree(&PlanarMap::identity(g)).unwrap();
        assert_eq!(d.k, 0);
        assert!(d.raw.abs() < 1e-12);
        assert!(d.confidence < 1e-12);
    }

    #[test]
    fn twist_degrees_are_exact_up_to_k8() {
        let g = grid(129, 64);
        for k in -8..=8i64 {
            let (map, _) = make_twist_2d(g, k);
            let d = degree(&map).unwrap();
            assert_eq!(d.k, k, "k={k}");
            assert!(d.confidence < 1e-10, "k={k}, confidence={}", d.confidence);
        }
    }

    #[test]
    fn quadrature_cross_check_agrees_coarsely() {
        let g = grid(257, 64);
        let (map, _) = make_twist_2d(g, 3);
        let q = degree_quadrature(&map).unwrap();
        assert!((q - 3.0).abs() < 1e-2, "quadrature raw {q}");
    }

    #[test]
    fn flow_composition_preserves_degree() {
        // Brute-force oracle at higher angular resolution agrees with the
        // default-resolution classification.
        let g = grid(65, 64);
        let spec = StreamSpec::new(0.1, 2, 1.0, 60).unwrap();
        let (flow, _) = make_flow_map(g, &spec).unwrap();
        let (twist, _) = make_twist_2d(g, -2);
        let composed = compose(&flow, &twist).unwrap();
        let d = degree(&composed).unwrap();
        assert_eq!(d.k, -2);

        let g_fine = grid(257, 256);
        let (flow_f, _) = make_flow_map(g_fine, &spec).unwrap();
        let (twist_f, _) = make_twist_2d(g_fine, -2);
        let composed_f = compose(&flow_f, &twist_f).unwrap();
        assert_eq!(degree(&composed_f).unwrap().k, -2);
    }

    #[test]
    fn same_class_matches_degree_equality() {
        let g = grid(65, 64);
        let id = PlanarMap::identity(g);
        let spec = StreamSpec::new(0.08, 1, 1.0, 60).unwrap();
        let (flow, _) = make_flow_map(g, &spec).unwrap();
        assert!(same_class(&id, &flow).unwrap());
        let (t1, _) = make_twist_2d(g, 1);
        let (t2, _) = make_twist_2d(g, 2);
        assert!(!same_class(&t1, &t2).unwrap());
        assert!(same_class(&t1, &t1).unwrap());
    }

    #[test]
    fn inverted_twist_has_opposite_degree() {
        let g = grid(65, 64);
        let (_, p) = make_twist_2d(g, 3);
        let inv_map = p.invert().to_map(g);
        assert_eq!(degree(&inv_map).unwrap().k, -3);
    }

    #[test]
    fn loop_parity_follows_k_mod_2() {
        for (k, parity) in [(2i64, 0u8), (-3, 1), (0, 0), (5, 1)] {
            let p = make_twist_profile_even_n(1.0, 2.0, 4, k, 33).unwrap();
            assert_eq!(loop_parity(&p).unwrap(), parity, "k={k}");
        }
    }

    #[test]
    fn loop_parity_rejects_dimension_two() {
        let g = grid(17, 16);
        let (_, p) = make_twist_2d(g, 1);
        assert!(matches!(
            loop_parity(&p),
            Err(Error::Dimension { n: 2, .. })
        ));
    }

    #[test]
    fn degenerate_map_is_rejected() {
        let g = grid(17, 16);
        let map = PlanarMap::from_fn(g, |r, t| {
            if (r - 1.5).abs() < 1e-3 {
                (0.0, 0.0)
            } else {
                (r * t.cos(), r * t.sin())
            }
        });
        assert!(matches!(degree(&map), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn raw_gap_small_for_flow_composed_maps() {
        let g = AnnulusGrid::new(1.0, E, 257, 256).unwrap();
        let spec = StreamSpec::new(0.1, 2, 1.0, 100).unwrap();
        let (flow, _) = make_flow_map(g, &spec).unwrap();
        let (twist, _) = make_twist_2d(g, 1);
        let composed = compose(&flow, &twist).unwrap();
        let d = degree(&composed).unwrap();
        assert_eq!(d.k, 1);
        assert!(d.confidence <= 1e-3, "confidence {}", d.confidence);
    }
}
