//! The symmetrisation operator (admissible map -> twist in the same class,
//! energy non-increasing) and the coarea / isoperimetric / ring-identity
//! diagnostics behind its proof.
//!
//! Angular derivatives inside the ring integrands use the sin-scaled central
//! difference (f_{j+1} - f_{j-1}) / (2 sin h): a two-point stencil of the same
//! order as the plain one but exact on single-harmonic loops, which keeps the
//! ring identities at machine precision on twist maps. Radial derivatives and
//! the cumulative radial integral use the grid stencils and the trapezoid rule
//! so that the angle profile lands exactly on radial nodes.

use std::f64::consts::TAU;

use crate::error::Result;
use crate::grid::{log_annulus_integral, ScalarField};
use crate::maps::{PlanarMap, TwistProfile};
use crate::energy::WeightSpec;

const DEGENERACY_EPS: f64 = 1e-12;

/// Angular derivative of the map restricted to ring i, sin-scaled central
/// difference, returned as (u1_t, u2_t) per angular node.
fn ring_dtheta(map: &PlanarMap, i: usize) -> (Vec<f64>, Vec<f64>) {
    let g = map.grid();
    let n_t = g.n_t();
    let denom = 2.0 * g.h_t().sin();
    let mut d1 = Vec::with_capacity(n_t);
    let mut d2 = Vec::with_capacity(n_t);
    for j in 0..n_t {
        let jp = (j + 1) % n_t;
        let jm = (j + n_t - 1) % n_t;
        let (x_p, y_p) = map.at(i, jp);
        let (x_m, y_m) = map.at(i, jm);
        d1.push((x_p - x_m) / denom);
        d2.push((y_p - y_m) / denom);
    }
    (d1, d2)
}

/// Composite Simpson weights over radial nodes 0..=i_max (3/8 correction for an
/// odd interval count, plain trapezoid when only one interval exists).
fn simpson_weights(i_max: usize) -> Vec<f64> {
    let m = i_max; // number of intervals
    let mut w = vec![0.0; i_max + 1];
    if m == 0 {
        return w;
    }
    if m == 1 {
        w[0] = 0.5;
        w[1] = 0.5;
        return w;
    }
    let simpson_upto = if m % 2 == 0 { m } else { m - 3 };
    if simpson_upto >= 2 {
        w[0] += 1.0 / 3.0;
        w[simpson_upto] += 1.0 / 3.0;
        for k in 1..simpson_upto {
            w[k] += if k % 2 == 1 { 4.0 / 3.0 } else { 2.0 / 3.0 };
        }
    }
    if m % 2 == 1 {
        if m == 3 {
            // pure 3/8 rule
            w[0] += 3.0 / 8.0;
            w[1] += 9.0 / 8.0;
            w[2] += 9.0 / 8.0;
            w[3] += 3.0 / 8.0;
        } else {
            w[simpson_upto] += 3.0 / 8.0;
            w[simpson_upto + 1] += 9.0 / 8.0;
            w[simpson_upto + 2] += 9.0 / 8.0;
            w[simpson_upto + 3] += 3.0 / 8.0;
        }
    }
    w
}

/// The symmetrised twist of an admissible map: the angle of rotation
/// g(r) = (1/2 pi) int_a^r int_0^2pi (u x u_r)/|u|^2 dtheta dr', evaluated
/// cumulatively so g lands exactly on the radial nodes, together with the twist
/// map u_bar(x) = R[g(r)] x it generates.
///
/// g(b) is deliberately not snapped to 2 pi k; the unsnapped endpoint is a
/// discretization-quality metric and the degree test lives in `topology`.
pub fn symmetrise(map: &PlanarMap) -> Result<(PlanarMap, TwistProfile)> {
    map.require_modulus(DEGENERACY_EPS)?;
    map.u1().check_finite()?;
    map.u2().check_finite()?;
    let g = *map.grid();
    let (u1r, _) = map.u1().grad_polar_unchecked();
    let (u2r, _) = map.u2().grad_polar_unchecked();
    let n_r = g.n_r();
    let n_t = g.n_t();
    // theta-average of (u x u_r)/|u|^2 per radius
    let mut avg = Vec::with_capacity(n_r);
    for i in 0..n_r {
        let mut acc = 0.0;
        for j in 0..n_t {
            let (x, y) = map.at(i, j);
            let cross = x * u2r.at(i, j) - y * u1r.at(i, j);
            acc += cross / (x * x + y * y);
        }
        avg.push(acc / n_t as f64);
    }
    // cumulative trapezoid in r
    let h = g.h_r();
    let mut angles = Vec::with_capacity(n_r);
    angles.push(0.0);
    for i in 1..n_r {
        let prev = angles[i - 1];
        angles.push(prev + 0.5 * h * (avg[i - 1] + avg[i]));
    }
    let radii: Vec<f64> = (0..n_r).map(|i| g.r(i)).collect();
    let profile =
        TwistProfile::from_samples(g.inner_radius(), g.outer_radius(), 2, radii, angles)?;
    let bar = profile.to_map(g);
    Ok((bar, profile))
}

/// Per-radius residuals of the angular identity
/// int_0^2pi (u x u_t)/|u|^2 dtheta = 2 pi (a.e. r).
#[derive(Debug, Clone, serde::Serialize)]
pub struct AngularIdentityReport {
    /// (radius, |integral - 2 pi|) at every radial node.
    pub residuals: Vec<(f64, f64)>,
    /// Maximum over the interior radial nodes (one-sided stencils degrade the
    /// boundary rows of other diagnostics; kept symmetric here).
    pub max_interior: f64,
}

pub fn check_angular_identity(map: &PlanarMap) -> Result<AngularIdentityReport> {
    map.require_modulus(DEGENERACY_EPS)?;
    let g = map.grid();
    let h_t = g.h_t();
    let mut residuals = Vec::with_capacity(g.n_r());
    let mut max_interior: f64 = 0.0;
    for i in 0..g.n_r() {
        let (d1, d2) = ring_dtheta(map, i);
        let mut acc = 0.0;
        for j in 0..g.n_t() {
            let (x, y) = map.at(i, j);
            acc += (x * d2[j] - y * d1[j]) / (x * x + y * y);
        }
        let integral = acc * h_t;
        let res = (integral - TAU).abs();
        residuals.push((g.r(i), res));
        if i > 0 && i < g.n_r() - 1 {
            max_interior = max_interior.max(res);
        }
    }
    Ok(AngularIdentityReport {
        residuals,
        max_interior,
    })
}

/// Both sides of the ring identity
/// int_0^2pi Phi(|u|)^2 (u x u_t) dtheta |_a^r
///   = 2 int_{X_r} [ |u| Phi(|u|) Phi_dot(|u|) + Phi(|u|)^2 ] dx
/// at the radial node `i_r`. Returns (lhs, rhs, |lhs - rhs|).
pub fn check_ring_identity<F, DF>(
    map: &PlanarMap,
    phi: F,
    phi_dot: DF,
    i_r: usize,
) -> Result<(f64, f64, f64)>
where
    F: Fn(f64) -> f64,
    DF: Fn(f64) -> f64,
{
    map.require_modulus(DEGENERACY_EPS)?;
    let g = *map.grid();
    let h_t = g.h_t();
    let ring_integral = |i: usize| -> f64 {
        let (d1, d2) = ring_dtheta(map, i);
        let mut acc = 0.0;
        for j in 0..g.n_t() {
            let (x, y) = map.at(i, j);
            let p = phi(x.hypot(y));
            acc += p * p * (x * d2[j] - y * d1[j]);
        }
        acc * h_t
    };
    let lhs = ring_integral(i_r) - ring_integral(0);
    // rhs: Simpson in r of the ring-averaged area integrand over [a, r_{i_r}]
    let w = simpson_weights(i_r);
    let h_r = g.h_r();
    let mut rhs = 0.0;
    for i in 0..=i_r {
        let r = g.r(i);
        let mut ring = 0.0;
        for j in 0..g.n_t() {
            let (x, y) = map.at(i, j);
            let m = x.hypot(y);
            let p = phi(m);
            ring += m * p * phi_dot(m) + p * p;
        }
        rhs += w[i] * h_r * r * ring * h_t;
    }
    rhs *= 2.0;
    Ok((lhs, rhs, (lhs - rhs).abs()))
}

/// Jensen ring bound int_0^2pi Gamma(|u|)^2 (u x u_t)^2 / |u|^4 dtheta
/// >= 2 pi Gamma(r)^2 at the radial node `i_r`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct JensenRingBound {
    pub lhs: f64,
    pub bound: f64,
    /// lhs - bound; the continuum bound is margin >= 0 (up to discretization).
    pub margin: f64,
    /// False when the sampled hypothesis Gamma_dot(t)/t increasing failed; the
    /// bound is still computed.
    pub hypotheses_met: bool,
}

pub fn check_jensen_ring_bound(
    map: &PlanarMap,
    weight: &WeightSpec,
    i_r: usize,
) -> Result<JensenRingBound> {
    map.require_modulus(DEGENERACY_EPS)?;
    let g = *map.grid();
    let h_t = g.h_t();
    let (d1, d2) = ring_dtheta(map, i_r);
    let mut acc = 0.0;
    for j in 0..g.n_t() {
        let (x, y) = map.at(i_r, j);
        let m2 = x * x + y * y;
        let gam = weight.gamma(m2.sqrt());
        let cross = x * d2[j] - y * d1[j];
        acc += gam * gam * cross * cross / (m2 * m2);
    }
    let lhs = acc * h_t;
    let gr = weight.gamma(g.r(i_r));
    let bound = TAU * gr * gr;
    Ok(JensenRingBound {
        lhs,
        bound,
        margin: lhs - bound,
        hypotheses_met: weight.hypotheses_met,
    })
}

/// The coarea / isoperimetric / distribution-function chain of the
/// symmetrisation proof, sampled at `n_levels` uniform levels in (a, b).
#[derive(Debug, Clone, serde::Serialize)]
pub struct CoareaDiagnostics {
    pub t_samples: Vec<f64>,
    /// Marching-squares length of {|u| = t} per level.
    pub level_lengths: Vec<f64>,
    /// Distribution function alpha_u(t) = |{|u| >= t}| per level.
    pub distribution: Vec<f64>,
    /// int |grad|u|| / |u|^2 dx.
    pub grad_mod_over_u2: f64,
    /// int |grad|u||^2 / |u|^2 dx.
    pub grad_mod2_over_u2: f64,
    /// int dx / |u|^2.
    pub inv_u2: f64,
    /// Link (i): H^1({|u| = t}) >= 2 pi t (1 - tol) per level.
    pub isoperimetric_ok: Vec<bool>,
    /// Link (ii): | int dx/|u|^2 - 2 pi ln(b/a) |.
    pub log_integral_residual: f64,
    /// Link (iii): int(|grad|u||^2/|u|^2) * int(1/|u|^2) - (2 pi ln(b/a))^2.
    pub holder_margin: f64,
    /// Relative tolerance used for the per-level flags.
    pub isoperimetric_tol: f64,
}

pub fn coarea_diagnostics(map: &PlanarMap, n_levels: usize) -> Result<CoareaDiagnostics> {
    coarea_diagnostics_with_tol(map, n_levels, 0.01)
}

pub fn coarea_diagnostics_with_tol(
    map: &PlanarMap,
    n_levels: usize,
    tol: f64,
) -> Result<CoareaDiagnostics> {
    map.require_modulus(DEGENERACY_EPS)?;
    let g = *map.grid();
    let (a, b) = (g.inner_radius(), g.outer_radius());
    let modulus = map.modulus_field();
    let d = crate::energy::derivatives(map)?;

    let mut t_samples = Vec::with_capacity(n_levels);
    let mut level_lengths = Vec::with_capacity(n_levels);
    let mut distribution = Vec::with_capacity(n_levels);
    let mut isoperimetric_ok = Vec::with_capacity(n_levels);
    for l in 0..n_levels {
        let t = a + (l + 1) as f64 * (b - a) / (n_levels + 1) as f64;
        let len = modulus.level_set_length(t)?;
        t_samples.push(t);
        level_lengths.push(len);
        distribution.push(modulus.area_above(t));
        isoperimetric_ok.push(len >= TAU * t * (1.0 - tol));
    }

    // The three scalar links, with |grad|u|| taken algebraically from the
    // first-derivative fields.
    let n = g.node_count();
    let mut f1 = Vec::with_capacity(n); // |grad|u|| / |u|^2
    let mut f2 = Vec::with_capacity(n); // |grad|u||^2 / |u|^2
    let mut f3 = Vec::with_capacity(n); // 1 / |u|^2
    for i in 0..g.n_r() {
        let r2 = g.r(i) * g.r(i);
        for j in 0..g.n_t() {
            let (x, y) = map.at(i, j);
            let m2 = x * x + y * y;
            let dot_r = x * d.u1r.at(i, j) + y * d.u2r.at(i, j);
            let dot_t = x * d.u1t.at(i, j) + y * d.u2t.at(i, j);
            let grad_mod2 = (dot_r * dot_r + dot_t * dot_t / r2) / m2;
            f1.push(grad_mod2.sqrt() / m2);
            f2.push(grad_mod2 / m2);
            f3.push(1.0 / m2);
        }
    }
    let last = g.n_r() - 1;
    let grad_mod_over_u2 = ScalarField::new(g, f1)?.integrate_unchecked(last);
    let grad_mod2_over_u2 = ScalarField::new(g, f2)?.integrate_unchecked(last);
    let inv_u2 = ScalarField::new(g, f3)?.integrate_unchecked(last);

    let log_int = log_annulus_integral(a, b);
    Ok(CoareaDiagnostics {
        t_samples,
        level_lengths,
        distribution,
        grad_mod_over_u2,
        grad_mod2_over_u2,
        inv_u2,
        isoperimetric_ok,
        log_integral_residual: (inv_u2 - log_int).abs(),
        holder_margin: grad_mod2_over_u2 * inv_u2 - log_int * log_int,
        isoperimetric_tol: tol,
    })
}

/// Residual of the distribution-function identity
/// int Phi(|u|) dx = int Phi(|x|) dx, relative to the identity-map value.
pub fn check_distribution_invariance<F: Fn(f64) -> f64>(map: &PlanarMap, phi: F) -> Result<f64> {
    map.require_modulus(DEGENERACY_EPS)?;
    let g = *map.grid();
    let modulus = map.modulus_field();
    let lhs_field = {
        let mut values = Vec::with_capacity(g.node_count());
        for i in 0..g.n_r() {
            for j in 0..g.n_t() {
                values.push(phi(modulus.at(i, j)));
            }
        }
        ScalarField::new(g, values)?
    };
    let rhs_field = ScalarField::from_fn(g, |r, _| phi(r));
    let lhs = lhs_field.integrate()?;
    let rhs = rhs_field.integrate()?;
    Ok((lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{energy_f, energy_f_twist_closed_form};
    use crate::grid::{annulus_area, AnnulusGrid};
    use crate::maps::{compose, make_flow_map, make_twist_2d, StreamSpec};
    use crate::topology::degree;
    use std::f64::consts::{E, PI};

    fn grid(n_r: usize, n_t: usize) -> AnnulusGrid {
        AnnulusGrid::new(1.0, E, n_r, n_t).unwrap()
    }

    fn flow_composed(g: AnnulusGrid, eps: f64, m: usize, k: i64) -> PlanarMap {
        let spec = StreamSpec::new(eps, m, 1.0, 100).unwrap();
        let (flow, _) = make_flow_map(g, &spec).unwrap();
        let (twist, _) = make_twist_2d(g, k);
        compose(&flow, &twist).unwrap()
    }

    #[test]
    fn twist_is_a_fixed_point_up_to_stencil_error() {
        let g = grid(257, 256);
        let (map, profile) = make_twist_2d(g, 1);
        let (bar, p_sym) = symmetrise(&map).unwrap();
        let mut worst: f64 = 0.0;
        for (gs, ge) in p_sym.angles().iter().zip(profile.angles().iter()) {
            worst = worst.max((gs - ge).abs());
        }
        assert!(worst < 2e-3, "profile deviation {worst:.3e}");
        assert_eq!(degree(&bar).unwrap().k, 1);
        // order-2 convergence of the fixed-point defect
        let defect = |n: usize| {
            let g = grid(n + 1, 128);
            let (map, profile) = make_twist_2d(g, 1);
            let (_, p_sym) = symmetrise(&map).unwrap();
            p_sym
                .angles()
                .iter()
                .zip(profile.angles().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max)
        };
        let d1 = defect(64);
        let d2 = defect(128);
        let order = (d1 / d2).log2();
        assert!(order > 1.7, "fixed-point defect order {order}");
    }

    #[test]
    fn flow_map_symmetrises_to_near_identity_class() {
        let g = grid(129, 128);
        let spec = StreamSpec::new(0.1, 2, 1.0, 100).unwrap();
        let (flow, _) = make_flow_map(g, &spec).unwrap();
        let (bar, profile) = symmetrise(&flow).unwrap();
        // degree 0 forces g(b) ~ 0
        assert!(profile.angles().last().unwrap().abs() < 5e-2);
        assert_eq!(degree(&bar).unwrap().k, 0);
        let before = energy_f(&flow).unwrap().value;
        let after = energy_f(&bar).unwrap().value;
        assert!(
            after <= before * (1.0 + 1e-4),
            "energy rose: {after} > {before}"
        );
    }

    #[test]
    fn composed_map_symmetrises_into_its_class_with_energy_drop() {
        let g = grid(129, 128);
        let u = flow_composed(g, 0.1, 2, 1);
        let (bar, profile) = symmetrise(&u).unwrap();
        assert!(
            (profile.angles().last().unwrap() - TAU).abs() < 5e-2,
            "g(b) = {}",
            profile.angles().last().unwrap()
        );
        assert_eq!(degree(&u).unwrap().k, 1);
        assert_eq!(degree(&bar).unwrap().k, 1);
        let before = energy_f(&u).unwrap().value;
        let after = energy_f(&bar).unwrap().value;
        assert!(after <= before * (1.0 + 1e-4));
    }

    #[test]
    fn flow_composed_twist_is_not_a_twist() {
        // the witness of non-twistness: (u x u_theta)/|u|^2 varies in theta
        // for the composed map, while it is constant for an exact twist
        let g = grid(129, 128);
        let u = flow_composed(g, 0.1, 2, 1);
        let i_mid = g.n_r() / 2;
        let (d1, d2) = ring_dtheta(&u, i_mid);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..g.n_t() {
            let (x, y) = u.at(i_mid, j);
            let w = (x * d2[j] - y * d1[j]) / (x * x + y * y);
            lo = lo.min(w);
            hi = hi.max(w);
        }
        assert!(hi - lo > 1e-2, "integrand spread {:.3e}", hi - lo);
        let (twist, _) = make_twist_2d(g, 1);
        let (t1, t2) = ring_dtheta(&twist, i_mid);
        let mut tlo = f64::INFINITY;
        let mut thi = f64::NEG_INFINITY;
        for j in 0..g.n_t() {
            let (x, y) = twist.at(i_mid, j);
            let w = (x * t2[j] - y * t1[j]) / (x * x + y * y);
            tlo = tlo.min(w);
            thi = thi.max(w);
        }
        assert!(thi - tlo < 1e-10, "twist integrand spread {:.3e}", thi - tlo);
    }

    #[test]
    fn symmetrisation_is_idempotent_to_interpolation_tolerance() {
        let g = grid(257, 256);
        let u = flow_composed(g, 0.1, 2, 1);
        let (bar, _) = symmetrise(&u).unwrap();
        let (bar2, _) = symmetrise(&bar).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..g.n_r() {
            for j in 0..g.n_t() {
                let (x1, y1) = bar.at(i, j);
                let (x2, y2) = bar2.at(i, j);
                worst = worst.max((x1 - x2).hypot(y1 - y2));
            }
        }
        assert!(worst < 5e-3, "idempotence defect {worst:.3e}");
    }

    #[test]
    fn angular_identity_exact_on_identity_and_twists() {
        let g = grid(65, 64);
        let id_report = check_angular_identity(&PlanarMap::identity(g)).unwrap();
        assert!(
            id_report.max_interior < 1e-12,
            "identity residual {}",
            id_report.max_interior
        );
        let (t3, _) = make_twist_2d(g, 3);
        let r3 = check_angular_identity(&t3).unwrap();
        assert!(r3.max_interior < 1e-10, "twist residual {}", r3.max_interior);
    }

    #[test]
    fn angular_identity_order_two_on_flow_composed_maps() {
        let res = |n_t: usize| {
            let g = grid(65, n_t);
            let u = flow_composed(g, 0.1, 2, 1);
            check_angular_identity(&u).unwrap().max_interior
        };
        let r1 = res(64);
        let r2 = res(128);
        assert!(r1 < 1e-3, "residual at 64: {r1}");
        let order = (r1 / r2).log2();
        assert!(order > 1.6, "angular identity order {order} ({r1:.2e} -> {r2:.2e})");
    }

    #[test]
    fn ring_identity_phi_inverse_t_vanishes() {
        let g = grid(65, 64);
        let u = flow_composed(g, 0.1, 2, 1);
        let (lhs, rhs, res) =
            check_ring_identity(&u, |t| 1.0 / t, |t| -1.0 / (t * t), 32).unwrap();
        assert!(lhs.abs() < 1e-3, "lhs {lhs}");
        assert!(rhs.abs() < 1e-10, "rhs {rhs}");
        assert!(res < 1e-3);
    }

    #[test]
    fn ring_identity_phi_one_on_identity() {
        let g = grid(65, 64);
        let id = PlanarMap::identity(g);
        let i_r = 40;
        let r = g.r(i_r);
        let (lhs, rhs, res) = check_ring_identity(&id, |_| 1.0, |_| 0.0, i_r).unwrap();
        let exact = 2.0 * annulus_area(1.0, r);
        assert!((lhs - exact).abs() < 1e-6, "lhs {lhs} vs {exact}");
        assert!((rhs - exact).abs() < 1e-6, "rhs {rhs} vs {exact}");
        assert!(res < 1e-6);
    }

    #[test]
    fn ring_identity_phi_t_on_twist_midpoint() {
        let g = grid(257, 256);
        let (map, _) = make_twist_2d(g, 1);
        let i_r = (g.n_r() - 1) / 2;
        let (_, _, res) = check_ring_identity(&map, |t| t, |_| 1.0, i_r).unwrap();
        assert!(res < 1e-4, "residual {res:.3e}");
    }

    #[test]
    fn jensen_bound_equality_on_twists() {
        let g = grid(129, 128);
        let (map, _) = make_twist_2d(g, 2);
        let w = WeightSpec::new(|_| 1.0, 1.0, E);
        let jb = check_jensen_ring_bound(&map, &w, 64).unwrap();
        assert!(jb.hypotheses_met);
        assert!(
            jb.margin.abs() < 1e-8,
            "twist Jensen margin {:.3e}",
            jb.margin
        );
    }

    #[test]
    fn jensen_bound_nonnegative_on_flow_composed_maps() {
        let g = grid(129, 128);
        let u = flow_composed(g, 0.1, 2, 1);
        let gammas: [(fn(f64) -> f64, &str); 2] = [(|_| 1.0, "1"), (|t| t, "t")];
        for (gamma, name) in gammas {
            let w = WeightSpec::new(gamma, 1.0, E);
            for i_r in [16usize, 64, 100] {
                let jb = check_jensen_ring_bound(&u, &w, i_r).unwrap();
                assert!(
                    jb.margin >= -1e-4,
                    "Gamma={name}, i_r={i_r}: margin {:.3e}",
                    jb.margin
                );
            }
        }
    }

    #[test]
    fn coarea_chain_on_identity_and_twist() {
        let g = grid(257, 256);
        for map in [PlanarMap::identity(g), make_twist_2d(g, 2).0] {
            let d = coarea_diagnostics(&map, 8).unwrap();
            assert!(d.isoperimetric_ok.iter().all(|&ok| ok));
            for (t, len) in d.t_samples.iter().zip(d.level_lengths.iter()) {
                assert!((len - TAU * t).abs() / (TAU * t) < 1e-3);
            }
            assert!(d.log_integral_residual < 1e-3);
            assert!(d.holder_margin >= -1e-3);
        }
    }

    #[test]
    fn coarea_chain_on_flow_map_with_strict_margin() {
        let g = grid(257, 256);
        let spec = StreamSpec::new(0.1, 2, 1.0, 100).unwrap();
        let (flow, _) = make_flow_map(g, &spec).unwrap();
        let d = coarea_diagnostics(&flow, 16).unwrap();
        assert!(d.isoperimetric_ok.iter().all(|&ok| ok));
        // strict margin at most levels: a perturbed disc boundary is longer
        let strict = d
            .t_samples
            .iter()
            .zip(d.level_lengths.iter())
            .filter(|(t, len)| **len > TAU * **t)
            .count();
        assert!(
            strict * 2 >= d.t_samples.len(),
            "only {strict} of {} levels strict",
            d.t_samples.len()
        );
        assert!(d.log_integral_residual < 1e-3);
        assert!(d.holder_margin >= -1e-3);
        // distribution function matches the identity profile within cell resolution
        for (t, alpha) in d.t_samples.iter().zip(d.distribution.iter()) {
            let exact = PI * (E * E - t * t);
            assert!(
                (alpha - exact).abs() < 1e-2 * annulus_area(1.0, E),
                "alpha({t}) = {alpha} vs {exact}"
            );
        }
        // monotone non-increasing
        for w in d.distribution.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn distribution_invariance_examples() {
        let g = grid(129, 128);
        let id = PlanarMap::identity(g);
        assert!(check_distribution_invariance(&id, |_| 1.0).unwrap() < 1e-14);
        let (twist, _) = make_twist_2d(g, 2);
        assert!(check_distribution_invariance(&twist, |t| 1.0 / (t * t)).unwrap() < 1e-10);
        let spec = StreamSpec::new(0.1, 2, 1.0, 100).unwrap();
        let (flow, _) = make_flow_map(g, &spec).unwrap();
        assert!(check_distribution_invariance(&flow, |t| t * t).unwrap() < 1e-3);
    }

    #[test]
    fn minimality_in_class_for_suite_maps() {
        let g = grid(129, 128);
        for k in [-1i64, 0, 1, 2] {
            let u = flow_composed(g, 0.05, 2, k);
            let f = energy_f(&u).unwrap().value;
            let bound = energy_f_twist_closed_form(1.0, E, k);
            assert!(
                f >= bound * (1.0 - 1e-3),
                "k={k}: F {f} below closed form {bound}"
            );
        }
    }
}
