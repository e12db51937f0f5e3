//! Discrete admissible maps of the annulus: exact twist constructors in 2-D and
//! general even dimension, a Hamiltonian-flow generator of non-twist
//! incompressible test maps, and composition.
//!
//! Maps carry Cartesian components on the polar grid; polar components would be
//! ambiguous at non-zero winding while Cartesian values are single-valued.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{header_value, next_field, parse_err, parse_header_pairs, AnnulusGrid, ScalarField};

/// Discrete map u: annulus -> R^2, one Cartesian pair per node.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarMap {
    grid: AnnulusGrid,
    u1: ScalarField,
    u2: ScalarField,
}

/// Measured invariants of a discrete map.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MapDiagnostics {
    /// max |u - x| over both boundary rings.
    pub boundary_trace: f64,
    pub modulus_min: f64,
    pub modulus_max: f64,
    /// max |det grad u - 1| over all nodes.
    pub det_drift: f64,
}

impl PlanarMap {
    pub fn new(u1: ScalarField, u2: ScalarField) -> Result<Self> {
        if u1.grid() != u2.grid() {
            return Err(Error::GridMismatch(
                "map components live on different grids".into(),
            ));
        }
        let grid = *u1.grid();
        Ok(Self { grid, u1, u2 })
    }

    pub fn from_fn<F: FnMut(f64, f64) -> (f64, f64)>(grid: AnnulusGrid, mut f: F) -> Self {
        let mut v1 = Vec::with_capacity(grid.node_count());
        let mut v2 = Vec::with_capacity(grid.node_count());
        for i in 0..grid.n_r() {
            for j in 0..grid.n_t() {
                let (x, y) = f(grid.r(i), grid.theta(j));
                v1.push(x);
                v2.push(y);
            }
        }
        Self {
            grid,
            u1: ScalarField::new(grid, v1).expect("sized by construction"),
            u2: ScalarField::new(grid, v2).expect("sized by construction"),
        }
    }

    pub fn identity(grid: AnnulusGrid) -> Self {
        Self::from_fn(grid, |r, t| (r * t.cos(), r * t.sin()))
    }

    pub fn grid(&self) -> &AnnulusGrid {
        &self.grid
    }

    pub fn u1(&self) -> &ScalarField {
        &self.u1
    }

    pub fn u2(&self) -> &ScalarField {
        &self.u2
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> (f64, f64) {
        (self.u1.at(i, j), self.u2.at(i, j))
    }

    /// |u| at every node.
    pub fn modulus_field(&self) -> ScalarField {
        let mut values = Vec::with_capacity(self.grid.node_count());
        for i in 0..self.grid.n_r() {
            for j in 0..self.grid.n_t() {
                let (x, y) = self.at(i, j);
                values.push(x.hypot(y));
            }
        }
        ScalarField::new(self.grid, values).expect("sized by construction")
    }

    /// Smallest |u| with its node, for degeneracy checks.
    pub fn min_modulus(&self) -> (f64, usize, usize) {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..self.grid.n_r() {
            for j in 0..self.grid.n_t() {
                let (x, y) = self.at(i, j);
                let m = x.hypot(y);
                if m < best.0 {
                    best = (m, i, j);
                }
            }
        }
        best
    }

    pub(crate) fn require_modulus(&self, eps: f64) -> Result<()> {
        let (m, i, j) = self.min_modulus();
        if m < eps {
            return Err(Error::Degenerate { modulus: m, i, j });
        }
        Ok(())
    }

    /// Discrete det grad u = (u1_r u2_t - u2_r u1_t) / r, the Cartesian chain
    /// rule applied to the polar stencils.
    pub fn det_field(&self) -> Result<ScalarField> {
        self.u1.check_finite()?;
        self.u2.check_finite()?;
        let (u1r, u1t) = self.u1.grad_polar_unchecked();
        let (u2r, u2t) = self.u2.grad_polar_unchecked();
        let g = self.grid;
        let mut values = Vec::with_capacity(g.node_count());
        for i in 0..g.n_r() {
            let r = g.r(i);
            for j in 0..g.n_t() {
                values.push((u1r.at(i, j) * u2t.at(i, j) - u2r.at(i, j) * u1t.at(i, j)) / r);
            }
        }
        ScalarField::new(g, values)
    }

    pub fn diagnostics(&self) -> Result<MapDiagnostics> {
        let g = self.grid;
        let mut boundary: f64 = 0.0;
        for &i in &[0, g.n_r() - 1] {
            for j in 0..g.n_t() {
                let (x, y) = g.node_xy(i, j);
                let (ux, uy) = self.at(i, j);
                boundary = boundary.max((ux - x).hypot(uy - y));
            }
        }
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..g.n_r() {
            for j in 0..g.n_t() {
                let (x, y) = self.at(i, j);
                let m = x.hypot(y);
                lo = lo.min(m);
                hi = hi.max(m);
            }
        }
        let det = self.det_field()?;
        let drift = det
            .values()
            .iter()
            .map(|d| (d - 1.0).abs())
            .fold(0.0, f64::max);
        Ok(MapDiagnostics {
            boundary_trace: boundary,
            modulus_min: lo,
            modulus_max: hi,
            det_drift: drift,
        })
    }

    /// Check the admissibility invariants at the given tolerances, naming the
    /// first violated one.
    pub fn validate(&self, eps_bc: f64, eps_range: f64) -> Result<MapDiagnostics> {
        let d = self.diagnostics()?;
        if d.boundary_trace > eps_bc {
            return Err(Error::Validation(format!(
                "boundary trace violated: max |u - x| = {:.3e} > {:.1e} on the boundary rings",
                d.boundary_trace, eps_bc
            )));
        }
        let (a, b) = (self.grid.inner_radius(), self.grid.outer_radius());
        if d.modulus_min < a - eps_range || d.modulus_max > b + eps_range {
            return Err(Error::Validation(format!(
                "range violated: |u| in [{:.6}, {:.6}] leaves [{a} - {eps_range:.1e}, {b} + {eps_range:.1e}]",
                d.modulus_min, d.modulus_max
            )));
        }
        Ok(d)
    }

    /// CSV rows `i,j,u1,u2` under the grid header.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let g = &self.grid;
        writeln!(
            w,
            "# a={} b={} n_r={} n_t={}",
            g.inner_radius(),
            g.outer_radius(),
            g.n_r(),
            g.n_t()
        )?;
        for i in 0..g.n_r() {
            for j in 0..g.n_t() {
                let (x, y) = self.at(i, j);
                writeln!(w, "{},{},{},{}", i, j, x, y)?;
            }
        }
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(&mut BufWriter::new(file))
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err("<csv>", "missing header"))??;
        let grid = crate::grid::parse_grid_header(&header)?;
        let mut v1 = vec![f64::NAN; grid.node_count()];
        let mut v2 = vec![f64::NAN; grid.node_count()];
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let i: usize = next_field(&mut parts, &line)?;
            let j: usize = next_field(&mut parts, &line)?;
            let x: f64 = next_field(&mut parts, &line)?;
            let y: f64 = next_field(&mut parts, &line)?;
            if i >= grid.n_r() || j >= grid.n_t() {
                return Err(parse_err("<csv>", &format!("node ({i},{j}) out of range")));
            }
            v1[grid.idx(i, j)] = x;
            v2[grid.idx(i, j)] = y;
        }
        PlanarMap::new(ScalarField::new(grid, v1)?, ScalarField::new(grid, v2)?)
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Radial angle-of-rotation samples g(r_i) with g(a) = 0, encoding a twist map
/// exactly. Profiles are normalized to g(a) = 0; the additive 2 pi gauge of
/// the angle does not affect the map.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistProfile {
    a: f64,
    b: f64,
    k: i64,
    n: usize,
    r: Vec<f64>,
    g: Vec<f64>,
}

impl TwistProfile {
    /// Wrap existing samples. The winding integer is read off the endpoint gap
    /// (profiles coming out of symmetrisation keep their unsnapped g(b) as a
    /// quality metric).
    pub fn from_samples(a: f64, b: f64, n: usize, r: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if r.len() != g.len() || r.len() < 3 {
            return Err(Error::InvalidParameter(
                "profile needs matching r and g samples, at least 3".into(),
            ));
        }
        if !r.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter(
                "profile radii must be strictly increasing".into(),
            ));
        }
        let k = ((g[g.len() - 1] - g[0]) / TAU).round() as i64;
        Ok(Self { a, b, k, n, r, g })
    }

    pub fn inner_radius(&self) -> f64 {
        self.a
    }

    pub fn outer_radius(&self) -> f64 {
        self.b
    }

    pub fn winding(&self) -> i64 {
        self.k
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn angles(&self) -> &[f64] {
        &self.g
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Angle at an arbitrary radius by linear interpolation of the samples.
    pub fn angle_at(&self, radius: f64) -> f64 {
        let r = &self.r;
        if radius <= r[0] {
            return self.g[0];
        }
        if radius >= r[r.len() - 1] {
            return self.g[r.len() - 1];
        }
        let mut lo = 0;
        let mut hi = r.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if r[mid] <= radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = (radius - r[lo]) / (r[hi] - r[lo]);
        self.g[lo] + s * (self.g[hi] - self.g[lo])
    }

    /// Midpoint-difference derivative samples (r_mid, g_dot).
    pub fn gdot_midpoints(&self) -> Vec<(f64, f64)> {
        self.r
            .windows(2)
            .zip(self.g.windows(2))
            .map(|(rw, gw)| {
                let h = rw[1] - rw[0];
                (0.5 * (rw[0] + rw[1]), (gw[1] - gw[0]) / h)
            })
            .collect()
    }

    /// Centered derivative at the sample nodes, second-order one-sided at the
    /// ends (three-point formula, exact on quadratics for any spacing).
    pub fn gdot_nodes(&self) -> Vec<f64> {
        let n = self.len();
        let one_sided = |i0: usize, i1: usize, i2: usize| -> f64 {
            let (x0, x1, x2) = (self.r[i0], self.r[i1], self.r[i2]);
            let (f0, f1, f2) = (self.g[i0], self.g[i1], self.g[i2]);
            f0 * (2.0 * x0 - x1 - x2) / ((x0 - x1) * (x0 - x2))
                + f1 * (x0 - x2) / ((x1 - x0) * (x1 - x2))
                + f2 * (x0 - x1) / ((x2 - x0) * (x2 - x1))
        };
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[i] = if i == 0 {
                one_sided(0, 1, 2)
            } else if i == n - 1 {
                one_sided(n - 1, n - 2, n - 3)
            } else {
                (self.g[i + 1] - self.g[i - 1]) / (self.r[i + 1] - self.r[i - 1])
            };
        }
        out
    }

    /// The inverse twist: g -> -g, k -> -k. Exact since twists fix radii.
    pub fn invert(&self) -> TwistProfile {
        TwistProfile {
            a: self.a,
            b: self.b,
            k: -self.k,
            n: self.n,
            r: self.r.clone(),
            g: self.g.iter().map(|v| -v).collect(),
        }
    }

    /// Realize the profile as a discrete planar map u(x) = R[g(r)] x.
    pub fn to_map(&self, grid: AnnulusGrid) -> PlanarMap {
        PlanarMap::from_fn(grid, |r, t| {
            let phi = t + self.angle_at(r);
            (r * phi.cos(), r * phi.sin())
        })
    }

    /// CSV rows `r,g` under the header `# a=<a> b=<b> k=<k> n=<n>`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# a={} b={} k={} n={}", self.a, self.b, self.k, self.n)?;
        for (r, g) in self.r.iter().zip(self.g.iter()) {
            writeln!(w, "{},{}", r, g)?;
        }
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(&mut BufWriter::new(file))
    }

    pub fn read_csv<R: BufRead>(rd: R) -> Result<Self> {
        let mut lines = rd.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err("<csv>", "missing header"))??;
        let pairs = parse_header_pairs(&header)?;
        let a = header_value(&pairs, "a")?;
        let b = header_value(&pairs, "b")?;
        let n = header_value(&pairs, "n")? as usize;
        let mut r = Vec::new();
        let mut g = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            r.push(next_field::<f64>(&mut parts, &line)?);
            g.push(next_field::<f64>(&mut parts, &line)?);
        }
        Self::from_samples(a, b, n, r, g)
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// The extremal 2-D twist: g(r) = 2 pi k log(r/a) / log(b/a), realized on the
/// grid together with its profile. Boundary values are exact and the discrete
/// det grad u is 1 + O(h^2).
pub fn make_twist_2d(grid: AnnulusGrid, k: i64) -> (PlanarMap, TwistProfile) {
    let (a, b) = (grid.inner_radius(), grid.outer_radius());
    let gk = TAU * k as f64;
    let log_ba = (b / a).ln();
    let angle = |r: f64| gk * (r / a).ln() / log_ba;
    let map = PlanarMap::from_fn(grid, |r, t| {
        let phi = t + angle(r);
        (r * phi.cos(), r * phi.sin())
    });
    let r: Vec<f64> = (0..grid.n_r()).map(|i| grid.r(i)).collect();
    let g: Vec<f64> = r.iter().map(|&ri| angle(ri)).collect();
    let profile = TwistProfile {
        a,
        b,
        k,
        n: 2,
        r,
        g,
    };
    (map, profile)
}

/// Closed-form extremal profile for even ambient dimension n >= 4:
/// g(r) = 2 pi k ((r/a)^(2-n) - 1) / ((b/a)^(2-n) - 1), sampled on n_nodes
/// uniform radii. Odd n admits only the trivial twist, so it is rejected.
pub fn make_twist_profile_even_n(
    a: f64,
    b: f64,
    n: usize,
    k: i64,
    n_nodes: usize,
) -> Result<TwistProfile> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Dimension {
            n,
            reason: "extremal twist profiles exist for n = 2 or even n >= 4; odd n forces the trivial loop".into(),
        });
    }
    if n_nodes < 3 {
        return Err(Error::InvalidParameter("need at least 3 nodes".into()));
    }
    if !(a > 0.0 && b > a) {
        return Err(Error::InvalidParameter(format!(
            "radii must satisfy 0 < a < b, got a={a}, b={b}"
        )));
    }
    let gk = TAU * k as f64;
    let h = (b - a) / (n_nodes - 1) as f64;
    let r: Vec<f64> = (0..n_nodes)
        .map(|i| if i == n_nodes - 1 { b } else { a + i as f64 * h })
        .collect();
    let g: Vec<f64> = if n == 2 {
        let log_ba = (b / a).ln();
        r.iter().map(|&ri| gk * (ri / a).ln() / log_ba).collect()
    } else {
        let p = 2.0 - n as f64;
        let denom = (b / a).powf(p) - 1.0;
        r.iter()
            .map(|&ri| gk * ((ri / a).powf(p) - 1.0) / denom)
            .collect()
    };
    Ok(TwistProfile {
        a,
        b,
        k,
        n,
        r,
        g,
    })
}

/// Incompressible non-twist test map parameters: the stream function
/// psi(r, theta) = eps s(r) cos(m theta) with the radial bump
/// s(r) = sin^2(pi (r-a)/(b-a)).
///
/// The bump vanishes together with its first derivative at r = a and r = b, so
/// the exact Hamiltonian flow fixes both boundary circles pointwise and the
/// flow map is a discrete member of the admissible class with degree 0.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StreamSpec {
    pub amplitude: f64,
    pub mode: usize,
    pub flow_time: f64,
    pub steps: usize,
}

impl StreamSpec {
    pub fn new(amplitude: f64, mode: usize, flow_time: f64, steps: usize) -> Result<Self> {
        if mode < 1 {
            return Err(Error::InvalidParameter("angular mode must be >= 1".into()));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("need at least one flow step".into()));
        }
        if !amplitude.is_finite() || !flow_time.is_finite() {
            return Err(Error::InvalidParameter(
                "amplitude and flow time must be finite".into(),
            ));
        }
        Ok(Self {
            amplitude,
            mode,
            flow_time,
            steps,
        })
    }

    /// Stream function value at (r, theta).
    pub fn psi(&self, a: f64, b: f64, r: f64, theta: f64) -> f64 {
        let w = PI * (r - a) / (b - a);
        self.amplitude * w.sin().powi(2) * (self.mode as f64 * theta).cos()
    }

    /// Hamiltonian velocity grad^perp psi = (-psi_y, psi_x) at a Cartesian point.
    #[inline]
    fn velocity(&self, a: f64, b: f64, x: f64, y: f64) -> (f64, f64) {
        let r = x.hypot(y);
        let (ct, st) = (x / r, y / r);
        // cos(m theta), sin(m theta) by the angle-addition recurrence.
        let (mut cm, mut sm) = (1.0, 0.0);
        for _ in 0..self.mode {
            let c = cm * ct - sm * st;
            sm = sm * ct + cm * st;
            cm = c;
        }
        let w = PI * (r - a) / (b - a);
        let (sw, cw) = w.sin_cos();
        let s = sw * sw;
        let ds = 2.0 * sw * cw * PI / (b - a);
        let psi_r = self.amplitude * ds * cm;
        let psi_t = -self.amplitude * s * self.mode as f64 * sm;
        let psi_x = psi_r * ct - psi_t * st / r;
        let psi_y = psi_r * st + psi_t * ct / r;
        (-psi_y, psi_x)
    }
}

/// Integrate the Hamiltonian flow of `spec` for its flow time from every grid
/// node with the classical fourth-order one-step method.
///
/// Returns the flow map together with max |det grad u - 1| as a drift
/// diagnostic. A trajectory leaving the annulus by more than a small slack
/// aborts with a step-size error.
pub fn make_flow_map(grid: AnnulusGrid, spec: &StreamSpec) -> Result<(PlanarMap, f64)> {
    let (a, b) = (grid.inner_radius(), grid.outer_radius());
    let slack = 1e-6 * (b - a);
    let dt = spec.flow_time / spec.steps as f64;
    let mut v1 = Vec::with_capacity(grid.node_count());
    let mut v2 = Vec::with_capacity(grid.node_count());
    for i in 0..grid.n_r() {
        for j in 0..grid.n_t() {
            let (mut x, mut y) = grid.node_xy(i, j);
            if spec.amplitude != 0.0 && i != 0 && i != grid.n_r() - 1 {
                for _ in 0..spec.steps {
                    let (k1x, k1y) = spec.velocity(a, b, x, y);
                    let (k2x, k2y) = spec.velocity(a, b, x + 0.5 * dt * k1x, y + 0.5 * dt * k1y);
                    let (k3x, k3y) = spec.velocity(a, b, x + 0.5 * dt * k2x, y + 0.5 * dt * k2y);
                    let (k4x, k4y) = spec.velocity(a, b, x + dt * k3x, y + dt * k3y);
                    x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
                    y += dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
                    let r = x.hypot(y);
                    if r < a - slack || r > b + slack {
                        return Err(Error::FlowEscaped {
                            lo: a - slack,
                            hi: b + slack,
                            i,
                            j,
                        });
                    }
                }
            }
            v1.push(x);
            v2.push(y);
        }
    }
    let map = PlanarMap::new(
        ScalarField::new(grid, v1)?,
        ScalarField::new(grid, v2)?,
    )?;
    let det = map.det_field()?;
    let drift = det
        .values()
        .iter()
        .map(|d| (d - 1.0).abs())
        .fold(0.0, f64::max);
    Ok((map, drift))
}

/// Node-wise evaluation of `outer` at `inner`'s values by bilinear
/// interpolation in (r, theta). Degrees add; the boundary trace is preserved up
/// to interpolation error.
pub fn compose(outer: &PlanarMap, inner: &PlanarMap) -> Result<PlanarMap> {
    let g = *outer.grid();
    if inner.grid() != &g {
        return Err(Error::GridMismatch(
            "compose expects both maps on the same grid".into(),
        ));
    }
    let (a, b) = (g.inner_radius(), g.outer_radius());
    let slack = 1e-9_f64.max(1e-9 * (b - a));
    let h_r = g.h_r();
    let h_t = g.h_t();
    let mut v1 = Vec::with_capacity(g.node_count());
    let mut v2 = Vec::with_capacity(g.node_count());
    for i in 0..g.n_r() {
        for j in 0..g.n_t() {
            let (x, y) = inner.at(i, j);
            let r = x.hypot(y);
            if r < a - slack || r > b + slack {
                return Err(Error::OutOfRange {
                    r,
                    theta: y.atan2(x),
                    a,
                    b,
                });
            }
            let r = r.clamp(a, b);
            let theta = y.atan2(x).rem_euclid(TAU);
            let fi = ((r - a) / h_r).min((g.n_r() - 2) as f64);
            let i0 = fi.floor() as usize;
            let s = ((r - g.r(i0)) / h_r).clamp(0.0, 1.0);
            let fj = theta / h_t;
            let j0 = (fj.floor() as usize).min(g.n_t() - 1);
            let t = (fj - j0 as f64).clamp(0.0, 1.0);
            let j1 = (j0 + 1) % g.n_t();
            let lerp2 = |f: &ScalarField| -> f64 {
                let f00 = f.at(i0, j0);
                let f10 = f.at(i0 + 1, j0);
                let f01 = f.at(i0, j1);
                let f11 = f.at(i0 + 1, j1);
                (1.0 - s) * ((1.0 - t) * f00 + t * f01) + s * ((1.0 - t) * f10 + t * f11)
            };
            v1.push(lerp2(outer.u1()));
            v2.push(lerp2(outer.u2()));
        }
    }
    PlanarMap::new(ScalarField::new(g, v1)?, ScalarField::new(g, v2)?)
}

/// The canonical block-diagonal skew matrix J = diag(A_1, ..., A_{n/2}) with
/// 2x2 rotation generators, J^2 = -I (even n).
pub fn canonical_block_j(n: usize) -> Result<DMatrix<f64>> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Dimension {
            n,
            reason: "the canonical block matrix needs even n".into(),
        });
    }
    let mut j = DMatrix::zeros(n, n);
    for blk in 0..n / 2 {
        j[(2 * blk, 2 * blk + 1)] = -1.0;
        j[(2 * blk + 1, 2 * blk)] = 1.0;
    }
    Ok(j)
}

/// exp(g J) for the canonical J: cos(g) I + sin(g) J, using J^2 = -I.
pub fn exp_canonical_block(n: usize, g: f64) -> Result<DMatrix<f64>> {
    let j = canonical_block_j(n)?;
    Ok(DMatrix::identity(n, n) * g.cos() + j * g.sin())
}

/// A twist loop Q(r) = R exp(g(r) J) R^t in SO(n), even n: an orthogonal frame
/// plus the canonical block generator and a radial angle profile.
#[derive(Debug, Clone)]
pub struct LoopSpec {
    n: usize,
    frame: DMatrix<f64>,
    profile: TwistProfile,
}

impl LoopSpec {
    pub fn new(n: usize, frame: DMatrix<f64>, profile: TwistProfile) -> Result<Self> {
        if n < 2 || n % 2 != 0 {
            return Err(Error::Dimension {
                n,
                reason: "twist loops need even n".into(),
            });
        }
        if frame.nrows() != n || frame.ncols() != n {
            return Err(Error::InvalidParameter(format!(
                "frame must be {n}x{n}"
            )));
        }
        let gram = frame.transpose() * &frame;
        let defect = (&gram - DMatrix::<f64>::identity(n, n)).abs().max();
        if defect > 1e-12 {
            return Err(Error::Validation(format!(
                "frame is not orthogonal: |R^t R - I| = {defect:.3e}"
            )));
        }
        if frame.determinant() < 0.0 {
            return Err(Error::Validation(
                "frame must be a rotation (det +1)".into(),
            ));
        }
        if profile.dimension() != n {
            return Err(Error::GridMismatch(format!(
                "profile dimension {} does not match loop dimension {n}",
                profile.dimension()
            )));
        }
        Ok(Self { n, frame, profile })
    }

    pub fn with_identity_frame(profile: TwistProfile) -> Result<Self> {
        let n = profile.dimension();
        Self::new(n, DMatrix::identity(n, n), profile)
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn profile(&self) -> &TwistProfile {
        &self.profile
    }

    /// Q at a given angle value.
    pub fn q_of_angle(&self, g: f64) -> DMatrix<f64> {
        let e = exp_canonical_block(self.n, g).expect("n validated even");
        &self.frame * e * self.frame.transpose()
    }

    /// Q(r) through the sampled profile.
    pub fn q_at(&self, r: f64) -> DMatrix<f64> {
        self.q_of_angle(self.profile.angle_at(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    fn grid(a: f64, b: f64, n_r: usize, n_t: usize) -> AnnulusGrid {
        AnnulusGrid::new(a, b, n_r, n_t).unwrap()
    }

    #[test]
    fn twist_k0_is_identity() {
        let g = grid(1.0, 2.0, 17, 16);
        let (map, profile) = make_twist_2d(g, 0);
        let id = PlanarMap::identity(g);
        for i in 0..g.n_r() {
            for j in 0..g.n_t() {
                assert_eq!(map.at(i, j), id.at(i, j));
            }
        }
        assert!(profile.angles().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn twist_angle_at_geometric_midpoint() {
        // a=1, b=e, k=1: at r = sqrt(e) the angle is exactly pi, so
        // u(sqrt(e), 0) is (sqrt(e), 0) rotated by pi.
        let g = grid(1.0, E, 129, 128);
        let (_, profile) = make_twist_2d(g, 1);
        let r = E.sqrt();
        assert_relative_eq!(profile.angle_at(r), PI, epsilon = 1e-4); // linear interp of samples
        // Exact formula check without sampling error:
        let exact = TAU * (r / 1.0_f64).ln() / (E / 1.0_f64).ln();
        assert_relative_eq!(exact, PI, epsilon = 1e-13);
        let u = |radius: f64| {
            let phi = exact;
            (radius * phi.cos(), radius * phi.sin())
        };
        let (x, y) = u(r);
        assert_relative_eq!(x, -r, epsilon = 1e-12);
        assert!(y.abs() < 1e-12);
    }

    #[test]
    fn twist_outer_boundary_is_exact() {
        let g = grid(1.0, 2.0, 33, 32);
        let (map, profile) = make_twist_2d(g, -2);
        assert_eq!(profile.angles()[0], 0.0);
        assert_relative_eq!(profile.angles()[g.n_r() - 1], -2.0 * TAU, epsilon = 0.0);
        let d = map.diagnostics().unwrap();
        assert!(
            d.boundary_trace <= 1e-10,
            "boundary trace {}",
            d.boundary_trace
        );
    }

    #[test]
    fn twist_det_drift_decays_at_order_two() {
        let drift = |n: usize| {
            let g = grid(1.0, E, n + 1, n);
            let (map, _) = make_twist_2d(g, 1);
            map.diagnostics().unwrap().det_drift
        };
        let d1 = drift(64);
        let d2 = drift(128);
        let order = (d1 / d2).log2();
        assert!(order > 1.8, "det drift order {order} (d1={d1:.3e}, d2={d2:.3e})");
    }

    #[test]
    fn even_profile_boundary_and_midpoint() {
        let p = make_twist_profile_even_n(1.0, 2.0, 4, 1, 1001).unwrap();
        assert_eq!(p.angles()[0], 0.0);
        assert_relative_eq!(p.angles()[1000], TAU, epsilon = 1e-12);
        // Frozen oracle: g(1.5) = 2 pi (1.5^-2 - 1)/(2^-2 - 1) = 2 pi * 20/27.
        let expected = TAU * 20.0 / 27.0;
        assert_relative_eq!(expected, 4.654211338651545, epsilon = 1e-12);
        assert_relative_eq!(p.angle_at(1.5), expected, epsilon = 1e-7);
    }

    #[test]
    fn odd_dimension_is_rejected() {
        assert!(matches!(
            make_twist_profile_even_n(1.0, 2.0, 3, 1, 65),
            Err(Error::Dimension { n: 3, .. })
        ));
        assert!(matches!(
            make_twist_profile_even_n(1.0, 2.0, 1, 0, 65),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_amplitude_flow_is_identity() {
        let g = grid(1.0, 2.0, 17, 64);
        let spec = StreamSpec::new(0.0, 2, 1.0, 10).unwrap();
        let (map, drift) = make_flow_map(g, &spec).unwrap();
        let id = PlanarMap::identity(g);
        for i in 0..g.n_r() {
            for j in 0..g.n_t() {
                assert_eq!(map.at(i, j), id.at(i, j));
            }
        }
        // the drift diagnostic measures the stencil det of the identity,
        // which carries the angular sinc factor at this resolution
        assert!(drift < 2e-2, "drift {drift}");
    }

    #[test]
    fn flow_map_fixes_boundary_and_stays_in_range() {
        let g = grid(1.0, 2.0, 65, 64);
        let spec = StreamSpec::new(0.1, 2, 1.0, 100).unwrap();
        let (map, _) = make_flow_map(g, &spec).unwrap();
        let d = map.validate(1e-10, 1e-6).unwrap();
        assert!(d.boundary_trace <= 1e-10);
    }

    #[test]
    fn flow_map_det_drift_small_and_converged_in_step_count() {
        let g = grid(1.0, 2.0, 257, 256);
        let spec = StreamSpec::new(0.1, 2, 1.0, 100).unwrap();
        let (map, drift) = make_flow_map(g, &spec).unwrap();
        assert!(drift <= 1e-3, "det drift {drift}");
        // Halved-step oracle: the positions are already step-converged, so the
        // drift is dominated by the spatial stencils, not the integrator.
        let spec2 = StreamSpec::new(0.1, 2, 1.0, 200).unwrap();
        let (map2, _) = make_flow_map(g, &spec2).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..g.n_r() {
            for j in 0..g.n_t() {
                let (x1, y1) = map.at(i, j);
                let (x2, y2) = map2.at(i, j);
                worst = worst.max((x1 - x2).hypot(y1 - y2));
            }
        }
        assert!(worst < 1e-9, "integrator not step-converged: {worst}");
    }

    #[test]
    fn flow_map_converges_to_identity_linearly_in_amplitude() {
        let g = grid(1.0, 2.0, 33, 32);
        let id = PlanarMap::identity(g);
        let dist = |eps: f64| -> f64 {
            let spec = StreamSpec::new(eps, 2, 1.0, 50).unwrap();
            let (map, _) = make_flow_map(g, &spec).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..g.n_r() {
                for j in 0..g.n_t() {
                    let (x1, y1) = map.at(i, j);
                    let (x2, y2) = id.at(i, j);
                    worst = worst.max((x1 - x2).hypot(y1 - y2));
                }
            }
            worst
        };
        let d1 = dist(0.02);
        let d2 = dist(0.01);
        let ratio = d1 / d2;
        assert!(
            (1.8..2.2).contains(&ratio),
            "expected linear scaling in eps, ratio {ratio}"
        );
    }

    #[test]
    fn compose_with_identity_is_exact_at_nodes() {
        let g = grid(1.0, 2.0, 65, 256);
        let (tw, _) = make_twist_2d(g, 1);
        let id = PlanarMap::identity(g);
        let c = compose(&id, &tw).unwrap();
        for i in 0..g.n_r() {
            for j in 0..g.n_t() {
                let (x1, y1) = c.at(i, j);
                let (x2, y2) = tw.at(i, j);
                // identity sampled exactly, interpolation on circle chords is
                // not bit-exact but stays at interpolation error
                assert!((x1 - x2).hypot(y1 - y2) < 1e-3);
            }
        }
        // compose(u, identity) evaluates u exactly at the nodes.
        let c2 = compose(&tw, &id).unwrap();
        for i in 0..g.n_r() {
            for j in 0..g.n_t() {
                let (x1, y1) = c2.at(i, j);
                let (x2, y2) = tw.at(i, j);
                assert!(
                    (x1 - x2).hypot(y1 - y2) < 1e-12,
                    "node ({i},{j}): {:?} vs {:?}",
                    c2.at(i, j),
                    tw.at(i, j)
                );
            }
        }
    }

    #[test]
    fn compose_twists_adds_angles() {
        // Angle-addition oracle: the composed map's node angle minus theta
        // equals g_k + g_j within 1e-6 on the default grid.
        let g = grid(1.0, E, 257, 256);
        let (tk, pk) = make_twist_2d(g, 2);
        let (tj, pj) = make_twist_2d(g, 1);
        let c = compose(&tk, &tj).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..g.n_r() {
            let expected = pk.angles()[i] + pj.angles()[i];
            for j in 0..g.n_t() {
                let (x, y) = c.at(i, j);
                let phi = y.atan2(x);
                let diff = (phi - g.theta(j) - expected).rem_euclid(TAU);
                let diff = diff.min(TAU - diff);
                worst = worst.max(diff);
            }
        }
        assert!(worst <= 1e-6, "angle addition defect {worst:.3e}");
    }

    #[test]
    fn invert_twist_is_involutive_and_flips_sign() {
        let g = grid(1.0, E, 1025, 8);
        let (_, p) = make_twist_2d(g, 1);
        let q = p.invert();
        assert_eq!(q.winding(), -1);
        assert_relative_eq!(q.angle_at(E.sqrt()), -PI, epsilon = 1e-4);
        let back = q.invert();
        assert_eq!(p, back);
        let (_, p0) = make_twist_2d(g, 0);
        assert_eq!(p0.invert().winding(), 0);
    }

    #[test]
    fn profile_csv_round_trip() {
        let p = make_twist_profile_even_n(1.0, 2.0, 4, 3, 33).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = TwistProfile::read_csv(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn map_csv_round_trip() {
        let g = grid(1.0, 2.0, 9, 16);
        let (map, _) = make_twist_2d(g, 1);
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let back = PlanarMap::read_csv(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(map, back);
    }

    #[test]
    fn loop_spec_validates_frame() {
        let p = make_twist_profile_even_n(1.0, 2.0, 4, 1, 17).unwrap();
        assert!(LoopSpec::with_identity_frame(p.clone()).is_ok());
        let bad = DMatrix::from_diagonal_element(4, 4, 2.0);
        assert!(matches!(
            LoopSpec::new(4, bad, p),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn canonical_block_squares_to_minus_identity() {
        for n in [2usize, 4, 6] {
            let j = canonical_block_j(n).unwrap();
            let jj = &j * &j;
            let defect = (&jj + DMatrix::<f64>::identity(n, n)).abs().max();
            assert!(defect < 1e-15);
        }
    }
}
