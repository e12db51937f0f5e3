//! Residual evaluation of the Euler-Lagrange system for the F energy, the
//! reduced loop ODE with its closed-form and numerical solutions, the
//! gradient-field eigenvalue condition, and pressure reconstruction.
//!
//! Second derivatives compose the first-difference stencils of `grid` (simpler
//! boundary handling, order 2 in the interior); residual statistics are taken
//! on the interior sub-grid r in [a + 2h, b - 2h] where the one-sided stencils
//! cannot pollute them.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::maps::{canonical_block_j, exp_canonical_block, PlanarMap, TwistProfile};

/// The nonlinear first-order quantity
/// G = (grad u)^t / |u|^2 [ Lap u + |grad u|^2/|u|^2 u - 2/|u|^2 grad u (grad u)^t u ],
/// its discrete curl, the reconstructed pressure and the circulation defect.
///
/// The Euler-Lagrange system holds iff G is a gradient field; `max_curl` and
/// `path_defect` are two consistent discretizations of its failure to be one.
#[derive(Debug, Clone)]
pub struct ElResidual {
    pub g1: ScalarField,
    pub g2: ScalarField,
    /// d G2/dx - d G1/dy at every node (boundary rows use one-sided stencils).
    pub curl: ScalarField,
    /// Path-integrated potential, radial-then-angular from node (0,0), pinned
    /// to p(0,0) = 0.
    pub pressure: ScalarField,
    /// Same potential integrated angular-then-radial, for path-independence
    /// checks.
    pub pressure_alt: ScalarField,
    /// max |curl| over the interior sub-grid.
    pub max_curl: f64,
    /// max over interior cells of |circulation of G| / cell area.
    pub path_defect: f64,
}

impl ElResidual {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "max_curl": self.max_curl,
            "path_defect": self.path_defect,
            "pressure_pin": 0.0,
        })
    }
}

/// Assemble the residual field for a (smooth, constructed) map.
pub fn el_residual(map: &PlanarMap) -> Result<ElResidual> {
    map.require_modulus(1e-12)?;
    map.u1().check_finite()?;
    map.u2().check_finite()?;
    let g = *map.grid();
    let n_r = g.n_r();
    let n_t = g.n_t();

    let (u1r, u1t) = map.u1().grad_polar_unchecked();
    let (u2r, u2t) = map.u2().grad_polar_unchecked();
    let (u1rr, _) = u1r.grad_polar_unchecked();
    let (_, u1tt) = u1t.grad_polar_unchecked();
    let (u2rr, _) = u2r.grad_polar_unchecked();
    let (_, u2tt) = u2t.grad_polar_unchecked();

    let mut g1v = Vec::with_capacity(g.node_count());
    let mut g2v = Vec::with_capacity(g.node_count());
    for i in 0..n_r {
        let r = g.r(i);
        for j in 0..n_t {
            let t = g.theta(j);
            let (ct, st) = (t.cos(), t.sin());
            let (x, y) = map.at(i, j);
            let m2 = x * x + y * y;

            // Cartesian Jacobian entries from the polar stencils.
            let to_xy = |fr: f64, ft: f64| (fr * ct - ft * st / r, fr * st + ft * ct / r);
            let (u1x, u1y) = to_xy(u1r.at(i, j), u1t.at(i, j));
            let (u2x, u2y) = to_xy(u2r.at(i, j), u2t.at(i, j));

            let lap1 = u1rr.at(i, j) + u1r.at(i, j) / r + u1tt.at(i, j) / (r * r);
            let lap2 = u2rr.at(i, j) + u2r.at(i, j) / r + u2tt.at(i, j) / (r * r);

            let grad2 = u1x * u1x + u1y * u1y + u2x * u2x + u2y * u2y;

            // w = grad u (grad u)^t u
            let jtu1 = u1x * x + u2x * y; // (grad u)^t u, first component
            let jtu2 = u1y * x + u2y * y;
            let w1 = u1x * jtu1 + u1y * jtu2;
            let w2 = u2x * jtu1 + u2y * jtu2;

            let b1 = lap1 + grad2 / m2 * x - 2.0 / m2 * w1;
            let b2 = lap2 + grad2 / m2 * y - 2.0 / m2 * w2;

            // G = (grad u)^t b / |u|^2
            g1v.push((u1x * b1 + u2x * b2) / m2);
            g2v.push((u1y * b1 + u2y * b2) / m2);
        }
    }
    let g1 = ScalarField::new(g, g1v)?;
    let g2 = ScalarField::new(g, g2v)?;

    // curl by differencing G with the same stencils
    let (g1r, g1t) = g1.grad_polar_unchecked();
    let (g2r, g2t) = g2.grad_polar_unchecked();
    let mut curl_v = Vec::with_capacity(g.node_count());
    for i in 0..n_r {
        let r = g.r(i);
        for j in 0..n_t {
            let t = g.theta(j);
            let (ct, st) = (t.cos(), t.sin());
            let d_g2_dx = g2r.at(i, j) * ct - g2t.at(i, j) * st / r;
            let d_g1_dy = g1r.at(i, j) * st + g1t.at(i, j) * ct / r;
            curl_v.push(d_g2_dx - d_g1_dy);
        }
    }
    let curl = ScalarField::new(g, curl_v)?;
    // The curl composes three first-difference applications, so its clean
    // interior starts one row deeper than G's: rows [3, n_r - 4].
    let mut max_curl: f64 = 0.0;
    if n_r > 8 {
        for i in 3..=n_r - 4 {
            for j in 0..n_t {
                max_curl = max_curl.max(curl.at(i, j).abs());
            }
        }
    }

    // polar components of G for path integrals
    let comp = |i: usize, j: usize| -> (f64, f64) {
        let t = g.theta(j);
        let (ct, st) = (t.cos(), t.sin());
        let gr = g1.at(i, j) * ct + g2.at(i, j) * st;
        let gt = -g1.at(i, j) * st + g2.at(i, j) * ct;
        (gr, gt)
    };

    let h_r = g.h_r();
    let h_t = g.h_t();

    // radial-then-angular pressure
    let mut pressure_v = vec![0.0; g.node_count()];
    let mut radial_line0 = vec![0.0; n_r];
    for i in 1..n_r {
        let (gr_prev, _) = comp(i - 1, 0);
        let (gr_here, _) = comp(i, 0);
        radial_line0[i] = radial_line0[i - 1] + 0.5 * h_r * (gr_prev + gr_here);
    }
    for i in 0..n_r {
        let r = g.r(i);
        let mut acc = radial_line0[i];
        pressure_v[g.idx(i, 0)] = acc;
        for j in 1..n_t {
            let (_, gt_prev) = comp(i, j - 1);
            let (_, gt_here) = comp(i, j);
            acc += 0.5 * h_t * r * (gt_prev + gt_here);
            pressure_v[g.idx(i, j)] = acc;
        }
    }

    // angular-then-radial pressure. The angular leg runs along an interior
    // ring (the boundary rows carry doubly-one-sided stencil noise in G); the
    // short radial stub up to the anchor ring is shared with the first path,
    // so the difference of the two pressures measures interior circulation
    // only.
    let anchor = if n_r > 6 { 2 } else { 0 };
    let mut alt_v = vec![0.0; g.node_count()];
    let mut arc_anchor = vec![0.0; n_t];
    let r_anchor = g.r(anchor);
    for j in 1..n_t {
        let (_, gt_prev) = comp(anchor, j - 1);
        let (_, gt_here) = comp(anchor, j);
        arc_anchor[j] = arc_anchor[j - 1] + 0.5 * h_t * r_anchor * (gt_prev + gt_here);
    }
    for j in 0..n_t {
        let mut acc = radial_line0[anchor] + arc_anchor[j];
        // below the anchor, fall back to the first path's values
        for i in 0..anchor {
            alt_v[g.idx(i, j)] = pressure_v[g.idx(i, j)];
        }
        alt_v[g.idx(anchor, j)] = acc;
        for i in anchor + 1..n_r {
            let (gr_prev, _) = comp(i - 1, j);
            let (gr_here, _) = comp(i, j);
            acc += 0.5 * h_r * (gr_prev + gr_here);
            alt_v[g.idx(i, j)] = acc;
        }
    }
    let pressure = ScalarField::new(g, pressure_v)?;
    let pressure_alt = ScalarField::new(g, alt_v)?;

    // circulation per unit cell area on interior cells
    let mut path_defect: f64 = 0.0;
    if n_r > 8 {
        for i in 3..n_r - 4 {
            let r_in = g.r(i);
            let r_out = g.r(i + 1);
            let area = 0.5 * (r_in + r_out) * h_r * h_t;
            for j in 0..n_t {
                let jp = (j + 1) % n_t;
                let (gr_ij, gt_ij) = comp(i, j);
                let (gr_oj, gt_oj) = comp(i + 1, j);
                let (gr_ip, gt_ip) = comp(i, jp);
                let (gr_op, gt_op) = comp(i + 1, jp);
                let up = 0.5 * h_r * (gr_ij + gr_oj);
                let outer = 0.5 * h_t * r_out * (gt_oj + gt_op);
                let down = 0.5 * h_r * (gr_op + gr_ip);
                let inner = 0.5 * h_t * r_in * (gt_ip + gt_ij);
                let circulation = up + outer - down - inner;
                path_defect = path_defect.max((circulation / area).abs());
            }
        }
    }

    Ok(ElResidual {
        g1,
        g2,
        curl,
        pressure,
        pressure_alt,
        max_curl,
        path_defect,
    })
}

/// Numerical two-point solve of the loop ODE d/dr (r^(n-1) g_dot) = 0 with
/// g(a) = 0, g(b) = 2 pi k, by linear shooting with the classical fourth-order
/// integrator. Returns the profile together with the integrator's derivative
/// samples g_dot at the nodes.
///
/// Odd n with k != 0 has no twist solution and errors; odd n with k = 0 returns
/// the trivial profile.
pub fn solve_loop_ode(
    a: f64,
    b: f64,
    n: usize,
    k: i64,
    n_nodes: usize,
) -> Result<(TwistProfile, Vec<f64>)> {
    if !(a > 0.0 && b > a) {
        return Err(Error::InvalidParameter(format!(
            "radii must satisfy 0 < a < b, got a={a}, b={b}"
        )));
    }
    if n < 2 {
        return Err(Error::Dimension {
            n,
            reason: "the loop ODE needs ambient dimension n >= 2".into(),
        });
    }
    if n_nodes < 3 {
        return Err(Error::InvalidParameter("need at least 3 nodes".into()));
    }
    if n % 2 == 1 {
        if k != 0 {
            return Err(Error::NoTwistSolution(format!(
                "odd dimension n={n} admits only the trivial twist loop, so g(b) = 2 pi k with k={k} is unreachable"
            )));
        }
        let h = (b - a) / (n_nodes - 1) as f64;
        let r: Vec<f64> = (0..n_nodes)
            .map(|i| if i == n_nodes - 1 { b } else { a + i as f64 * h })
            .collect();
        let g = vec![0.0; n_nodes];
        return Ok((
            TwistProfile::from_samples(a, b, n, r, g)?,
            vec![0.0; n_nodes],
        ));
    }

    let h = (b - a) / (n_nodes - 1) as f64;
    let r: Vec<f64> = (0..n_nodes)
        .map(|i| if i == n_nodes - 1 { b } else { a + i as f64 * h })
        .collect();
    // g' = v, v' = -(n-1) v / r; shoot with v(a) = 1, rescale by linearity.
    let nm1 = (n - 1) as f64;
    let substeps = (8192 / (n_nodes - 1)).max(4);
    let dt = h / substeps as f64;
    let mut g_samples = Vec::with_capacity(n_nodes);
    let mut v_samples = Vec::with_capacity(n_nodes);
    let mut gv = (0.0f64, 1.0f64);
    let mut radius = a;
    g_samples.push(gv.0);
    v_samples.push(gv.1);
    let rhs = |r: f64, gv: (f64, f64)| (gv.1, -nm1 * gv.1 / r);
    for _ in 0..n_nodes - 1 {
        for _ in 0..substeps {
            let k1 = rhs(radius, gv);
            let k2 = rhs(radius + 0.5 * dt, (gv.0 + 0.5 * dt * k1.0, gv.1 + 0.5 * dt * k1.1));
            let k3 = rhs(radius + 0.5 * dt, (gv.0 + 0.5 * dt * k2.0, gv.1 + 0.5 * dt * k2.1));
            let k4 = rhs(radius + dt, (gv.0 + dt * k3.0, gv.1 + dt * k3.1));
            gv.0 += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            gv.1 += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            radius += dt;
        }
        g_samples.push(gv.0);
        v_samples.push(gv.1);
    }
    let scale = if k == 0 {
        0.0
    } else {
        TAU * k as f64 / g_samples[n_nodes - 1]
    };
    let g: Vec<f64> = g_samples.iter().map(|v| v * scale).collect();
    let v: Vec<f64> = v_samples.iter().map(|w| w * scale).collect();
    Ok((TwistProfile::from_samples(a, b, n, r, g)?, v))
}

/// A skew-symmetric matrix given as an orthogonal frame R and per-block scales
/// lambda_1..lambda_{n/2}: A = R diag(lambda_i A_i) R^t (even n) or A = 0
/// (odd n, lambdas empty).
#[derive(Debug, Clone)]
pub struct SkewSpec {
    pub n: usize,
    pub frame: DMatrix<f64>,
    pub lambdas: Vec<f64>,
}

impl SkewSpec {
    pub fn new(n: usize, frame: DMatrix<f64>, lambdas: Vec<f64>) -> Result<Self> {
        if frame.nrows() != n || frame.ncols() != n {
            return Err(Error::InvalidParameter(format!("frame must be {n}x{n}")));
        }
        let gram = frame.transpose() * &frame;
        let defect = (&gram - DMatrix::<f64>::identity(n, n)).abs().max();
        if defect > 1e-12 {
            return Err(Error::Validation(format!(
                "frame is not orthogonal (|R^t R - I| = {defect:.3e}), so the block form is not skew-preserving"
            )));
        }
        if n % 2 == 0 && lambdas.len() != n / 2 {
            return Err(Error::InvalidParameter(format!(
                "even n={n} needs n/2 block scales, got {}",
                lambdas.len()
            )));
        }
        if n % 2 == 1 && lambdas.iter().any(|l| *l != 0.0) {
            return Err(Error::Validation(
                "odd n admits only A = 0; nonzero block scales are not skew-realizable here".into(),
            ));
        }
        Ok(Self { n, frame, lambdas })
    }

    /// The assembled matrix A.
    pub fn assemble(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n, self.n);
        for (blk, lam) in self.lambdas.iter().enumerate() {
            if 2 * blk + 1 < self.n {
                s[(2 * blk, 2 * blk + 1)] = -lam;
                s[(2 * blk + 1, 2 * blk)] = *lam;
            }
        }
        &self.frame * s * self.frame.transpose()
    }
}

/// The middle EL term is a gradient field iff all the eigenvalue scales of the
/// skew matrix agree (odd n: iff A = 0).
pub fn gradient_field_condition(spec: &SkewSpec) -> Result<bool> {
    if spec.n % 2 == 1 {
        return Ok(spec.lambdas.iter().all(|l| *l == 0.0));
    }
    let first = spec.lambdas[0];
    let scale = spec
        .lambdas
        .iter()
        .fold(0.0f64, |acc, l| acc.max(l.abs()))
        .max(1.0);
    Ok(spec
        .lambdas
        .iter()
        .all(|l| (l - first).abs() <= 1e-12 * scale))
}

/// Closed-form radial speed constant c with g_dot = c / r^(n-1) for the
/// extremal profile of winding k on [a, b].
pub fn loop_speed_constant(a: f64, b: f64, n: usize, k: i64) -> f64 {
    let gk = TAU * k as f64;
    if n == 2 {
        gk / (b / a).ln()
    } else {
        let p = 2.0 - n as f64;
        // g(r) = gk ((r/a)^p - 1)/((b/a)^p - 1); g_dot r^(n-1) = gk p a^(-p) / ((b/a)^p - 1)
        gk * p * a.powf(-p) / ((b / a).powf(p) - 1.0)
    }
}

/// Verify the differential identities of the twist substitution chain
/// ((grad u)^t, |grad u|^2 and Lap u in terms of A and Q) on a lattice of
/// (r, direction) samples, using exact closed-form derivatives on both sides.
/// Returns the maximum mismatch.
pub fn check_twist_el_algebra(profile: &TwistProfile) -> Result<f64> {
    let n = profile.dimension();
    if n < 2 || n % 2 != 0 {
        return Err(Error::Dimension {
            n,
            reason: "the substitution chain needs the even-dimensional block twists".into(),
        });
    }
    let (a, b, k) = (
        profile.inner_radius(),
        profile.outer_radius(),
        profile.winding(),
    );
    let c = loop_speed_constant(a, b, n, k);
    let j = canonical_block_j(n)?;
    let big_a = &j * c;

    // direction samples on the unit sphere (any unit vectors will do; the
    // identities are pointwise)
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x7715);
    let n_dirs = 8;
    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(n_dirs);
    while dirs.len() < n_dirs {
        let mut v = DVector::zeros(n);
        for e in 0..n {
            v[e] = rng.gen_range(-1.0..1.0);
        }
        let norm = v.norm();
        if norm > 0.3 {
            dirs.push(v / norm);
        }
    }

    let nf = n as f64;
    let mut worst: f64 = 0.0;
    let radial_samples = 9;
    for s in 0..radial_samples {
        let r = a + (s as f64 + 0.5) * (b - a) / radial_samples as f64;
        let g_val = if n == 2 {
            TAU * k as f64 * (r / a).ln() / (b / a).ln()
        } else {
            let p = 2.0 - nf;
            TAU * k as f64 * ((r / a).powf(p) - 1.0) / ((b / a).powf(p) - 1.0)
        };
        let gdot = c / r.powi(n as i32 - 1);
        let gddot = -(nf - 1.0) * c / r.powi(n as i32);
        let q = exp_canonical_block(n, g_val)?;
        let qdot = &j * &q * gdot;
        let qddot = &j * &q * gddot + &j * (&j * &q) * (gdot * gdot);
        for theta in &dirs {
            let x = theta * r;
            // (grad u)^t = Q^t + theta (Qdot x)^t  vs  Q^t + r^(2-n) theta (A Q theta)^t
            let lhs1 = q.transpose() + theta * (&qdot * &x).transpose();
            let rhs1 = q.transpose()
                + theta * (&big_a * (&q * theta)).transpose() * r.powf(2.0 - nf);
            worst = worst.max((&lhs1 - &rhs1).abs().max());

            // |grad u|^2 = tr[(grad u)^t (grad u)] vs n + |A Q theta|^2 / r^(2(n-2))
            let grad_u = lhs1.transpose();
            let lhs2 = (grad_u.transpose() * &grad_u).trace();
            let aq = &big_a * (&q * theta);
            let rhs2 = nf + aq.norm_squared() / r.powf(2.0 * (nf - 2.0));
            worst = worst.max((lhs2 - rhs2).abs());

            // Lap u = [(n+1) Qdot + r Qddot] theta vs [2AQ/r^(n-1) + A^2 Q/r^(2n-3)] theta
            let lhs3 = (&qdot * (nf + 1.0) + &qddot * r) * theta;
            let rhs3 = (&big_a * &q * (2.0 / r.powf(nf - 1.0))
                + &big_a * (&big_a * &q) * (1.0 / r.powf(2.0 * nf - 3.0)))
                * theta;
            worst = worst.max((&lhs3 - &rhs3).abs().max());
        }
    }
    Ok(worst)
}
