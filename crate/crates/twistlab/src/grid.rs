//! Polar discretization of the annulus {a <= |x| <= b}: tensor grid, derivative
//! stencils, quadrature and level-set extraction.
//!
//! The grid is node-centered with uniform radial spacing and a periodic angular
//! direction handled by index wraparound (no duplicated seam column). Grids and
//! fields are immutable after construction; every operation below is a pure
//! function and reductions run in a fixed index order so results are
//! bit-reproducible.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Tensor polar grid on the annulus {a <= r <= b} with periodic angle.
///
/// Radial nodes r_i = a + i (b-a)/(n_r-1), angular nodes theta_j = 2 pi j / n_t
/// covering [0, 2 pi) exactly once (node n_t wraps to node 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusGrid {
    a: f64,
    b: f64,
    n_r: usize,
    n_t: usize,
}

impl AnnulusGrid {
    pub fn new(a: f64, b: f64, n_r: usize, n_t: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a <= 0.0 || b <= a {
            return Err(Error::InvalidParameter(format!(
                "annulus radii must satisfy 0 < a < b, got a={a}, b={b}"
            )));
        }
        if n_r < 3 {
            return Err(Error::InvalidParameter(format!(
                "radial node count must be >= 3, got {n_r}"
            )));
        }
        if n_t < 8 {
            return Err(Error::InvalidParameter(format!(
                "angular node count must be >= 8, got {n_t}"
            )));
        }
        Ok(Self { a, b, n_r, n_t })
    }

    pub fn inner_radius(&self) -> f64 {
        self.a
    }

    pub fn outer_radius(&self) -> f64 {
        self.b
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn node_count(&self) -> usize {
        self.n_r * self.n_t
    }

    /// Uniform radial spacing.
    pub fn h_r(&self) -> f64 {
        (self.b - self.a) / (self.n_r - 1) as f64
    }

    /// Uniform angular spacing.
    pub fn h_t(&self) -> f64 {
        TAU / self.n_t as f64
    }

    pub fn r(&self, i: usize) -> f64 {
        debug_assert!(i < self.n_r);
        if i == self.n_r - 1 {
            self.b
        } else {
            self.a + i as f64 * self.h_r()
        }
    }

    pub fn theta(&self, j: usize) -> f64 {
        debug_assert!(j < self.n_t);
        TAU * j as f64 / self.n_t as f64
    }

    /// Flat storage index of node (i, j).
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n_t + j
    }

    /// Cartesian position of node (i, j).
    pub fn node_xy(&self, i: usize, j: usize) -> (f64, f64) {
        let r = self.r(i);
        let t = self.theta(j);
        (r * t.cos(), r * t.sin())
    }

    /// True when the grid admits a factor-2 coarsening in both directions.
    pub fn coarsenable(&self) -> bool {
        (self.n_r - 1) % 2 == 0 && self.n_r >= 5 && self.n_t % 2 == 0 && self.n_t >= 16
    }

    /// The factor-2 coarsened grid (same annulus).
    pub fn coarsen(&self) -> Result<Self> {
        if !self.coarsenable() {
            return Err(Error::InvalidParameter(format!(
                "grid {}x{} cannot be coarsened by 2",
                self.n_r, self.n_t
            )));
        }
        Self::new(self.a, self.b, (self.n_r - 1) / 2 + 1, self.n_t / 2)
    }
}

/// One real value per grid node, stored row-major in (i, j).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: AnnulusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: AnnulusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "field carries {} values for a {}x{} grid",
                values.len(),
                grid.n_r(),
                grid.n_t()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: AnnulusGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.node_count()],
        }
    }

    /// Sample a function of (r, theta) at every node.
    pub fn from_fn<F: FnMut(f64, f64) -> f64>(grid: AnnulusGrid, mut f: F) -> Self {
        let mut values = Vec::with_capacity(grid.node_count());
        for i in 0..grid.n_r() {
            let r = grid.r(i);
            for j in 0..grid.n_t() {
                values.push(f(r, grid.theta(j)));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &AnnulusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Errors with the first offending node if any value is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for i in 0..self.grid.n_r() {
            for j in 0..self.grid.n_t() {
                if !self.at(i, j).is_finite() {
                    return Err(Error::NonFinite { i, j });
                }
            }
        }
        Ok(())
    }

    /// Integral of the field against the area element r dr dtheta.
    ///
    /// Composite trapezoid in r, periodic trapezoid in theta (spectrally
    /// accurate for smooth periodic integrands). Summation order is fixed.
    pub fn integrate(&self) -> Result<f64> {
        self.check_finite()?;
        Ok(self.integrate_unchecked(self.grid.n_r() - 1))
    }

    /// Same quadrature truncated at radial node `i_max` (the sub-annulus
    /// a <= r <= r_{i_max}); no finiteness check.
    pub(crate) fn integrate_unchecked(&self, i_max: usize) -> f64 {
        let g = &self.grid;
        let h = g.h_r();
        let ht = g.h_t();
        let mut total = 0.0;
        for i in 0..=i_max {
            let w = if i == 0 || i == i_max { 0.5 * h } else { h };
            let r = g.r(i);
            let mut ring = 0.0;
            for j in 0..g.n_t() {
                ring += self.at(i, j);
            }
            total += w * r * ring * ht;
        }
        total
    }

    /// Partial derivatives with respect to r and theta (theta derivative not
    /// yet divided by r).
    ///
    /// Central differences in the interior, one-sided second order at r = a
    /// and r = b, periodic central differences in theta.
    pub fn grad_polar(&self) -> Result<(ScalarField, ScalarField)> {
        self.check_finite()?;
        Ok(self.grad_polar_unchecked())
    }

    pub(crate) fn grad_polar_unchecked(&self) -> (ScalarField, ScalarField) {
        let g = self.grid;
        let n_r = g.n_r();
        let n_t = g.n_t();
        let h = g.h_r();
        let ht = g.h_t();
        let mut dr = vec![0.0; g.node_count()];
        let mut dt = vec![0.0; g.node_count()];
        for i in 0..n_r {
            for j in 0..n_t {
                let idx = g.idx(i, j);
                dr[idx] = if i == 0 {
                    (-3.0 * self.at(0, j) + 4.0 * self.at(1, j) - self.at(2, j)) / (2.0 * h)
                } else if i == n_r - 1 {
                    (3.0 * self.at(n_r - 1, j) - 4.0 * self.at(n_r - 2, j) + self.at(n_r - 3, j))
                        / (2.0 * h)
                } else {
                    (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * h)
                };
                let jp = (j + 1) % n_t;
                let jm = (j + n_t - 1) % n_t;
                dt[idx] = (self.at(i, jp) - self.at(i, jm)) / (2.0 * ht);
            }
        }
        (
            ScalarField { grid: g, values: dr },
            ScalarField { grid: g, values: dt },
        )
    }

    /// Length of the level set {field = t}, estimated by marching squares.
    ///
    /// Each polar cell is mapped to the Cartesian quadrilateral spanned by its
    /// four corners; crossings are located by linear interpolation along the
    /// edges and the returned value is the total polyline length (a Euclidean
    /// H^1 estimate, not a polar one).
    pub fn level_set_length(&self, t: f64) -> Result<f64> {
        self.check_finite()?;
        let (min, max) = (self.min(), self.max());
        if t < min || t > max {
            return Err(Error::EmptyContour { t, min, max });
        }
        let mut length = 0.0;
        self.for_each_cell_contour(t, |p, q| {
            length += ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        });
        if length == 0.0 {
            return Err(Error::EmptyContour { t, min, max });
        }
        Ok(length)
    }

    /// Area of the region {field > t}, by cell counting with a linear sub-cell
    /// correction at the interface (clipped-polygon area per cell).
    pub fn area_above(&self, t: f64) -> f64 {
        let g = &self.grid;
        let mut area = 0.0;
        for i in 0..g.n_r() - 1 {
            for j in 0..g.n_t() {
                let (ps, vs) = self.cell_corners(i, j);
                area += clipped_cell_area(&ps, &vs, t);
            }
        }
        area
    }

    /// Corner positions and values of cell (i, j), counterclockwise.
    fn cell_corners(&self, i: usize, j: usize) -> ([(f64, f64); 4], [f64; 4]) {
        let g = &self.grid;
        let jp = (j + 1) % g.n_t();
        let corners = [(i, j), (i + 1, j), (i + 1, jp), (i, jp)];
        let mut ps = [(0.0, 0.0); 4];
        let mut vs = [0.0; 4];
        for (k, &(ci, cj)) in corners.iter().enumerate() {
            ps[k] = g.node_xy(ci, cj);
            vs[k] = self.at(ci, cj);
        }
        (ps, vs)
    }

    /// Visit every contour segment of {field = t} as a pair of Cartesian points.
    fn for_each_cell_contour<F: FnMut((f64, f64), (f64, f64))>(&self, t: f64, mut visit: F) {
        let g = &self.grid;
        for i in 0..g.n_r() - 1 {
            for j in 0..g.n_t() {
                let (ps, vs) = self.cell_corners(i, j);
                // Inside means strictly above t so that a level coinciding
                // with a grid ring still yields the boundary polyline.
                let inside = [vs[0] > t, vs[1] > t, vs[2] > t, vs[3] > t];
                let mut crossings: Vec<(f64, f64)> = Vec::with_capacity(4);
                for e in 0..4 {
                    let n = (e + 1) % 4;
                    if inside[e] != inside[n] {
                        crossings.push(edge_crossing(ps[e], vs[e], ps[n], vs[n], t));
                    }
                }
                match crossings.len() {
                    2 => visit(crossings[0], crossings[1]),
                    4 => {
                        // Saddle cell: resolve by the mean corner value.
                        let mean = 0.25 * (vs[0] + vs[1] + vs[2] + vs[3]);
                        // Crossings come in edge order e0,e1,e2,e3. Pair them
                        // so the contour separates like-signed corners.
                        if (mean > t) == inside[0] {
                            visit(crossings[3], crossings[0]);
                            visit(crossings[1], crossings[2]);
                        } else {
                            visit(crossings[0], crossings[1]);
                            visit(crossings[2], crossings[3]);
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    /// Serialize as CSV: header `# a=<a> b=<b> n_r=<n_r> n_t=<n_t>`, then rows
    /// `i,j,value`. Values use the shortest round-trip representation, so a
    /// read-back is bit-exact.
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
                writeln!(w, "{},{},{}", i, j, self.at(i, j))?;
            }
        }
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_csv(&mut w)
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err("<csv>", "missing header"))??;
        let grid = parse_grid_header(&header)?;
        let mut values = vec![f64::NAN; grid.node_count()];
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let i: usize = next_field(&mut parts, &line)?;
            let j: usize = next_field(&mut parts, &line)?;
            let v: f64 = next_field(&mut parts, &line)?;
            if i >= grid.n_r() || j >= grid.n_t() {
                return Err(parse_err("<csv>", &format!("node ({i},{j}) out of range")));
            }
            values[grid.idx(i, j)] = v;
        }
        ScalarField::new(grid, values)
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

pub(crate) fn parse_err(path: &str, reason: &str) -> Error {
    Error::Parse {
        path: path.to_string(),
        reason: reason.to_string(),
    }
}

pub(crate) fn next_field<T: std::str::FromStr>(
    parts: &mut std::str::Split<'_, char>,
    line: &str,
) -> Result<T> {
    parts
        .next()
        .ok_or_else(|| parse_err("<csv>", &format!("short row: {line}")))?
        .trim()
        .parse::<T>()
        .map_err(|_| parse_err("<csv>", &format!("bad field in row: {line}")))
}

/// Parse `# key=value ...` headers into a lookup.
pub(crate) fn parse_header_pairs(header: &str) -> Result<Vec<(String, f64)>> {
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| parse_err("<csv>", "header must start with '#'"))?;
    let mut pairs = Vec::new();
    for token in body.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| parse_err("<csv>", &format!("bad header token {token}")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| parse_err("<csv>", &format!("bad header value {token}")))?;
        pairs.push((k.to_string(), v));
    }
    Ok(pairs)
}

pub(crate) fn header_value(pairs: &[(String, f64)], key: &str) -> Result<f64> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| parse_err("<csv>", &format!("header missing {key}")))
}

pub(crate) fn parse_grid_header(header: &str) -> Result<AnnulusGrid> {
    let pairs = parse_header_pairs(header)?;
    AnnulusGrid::new(
        header_value(&pairs, "a")?,
        header_value(&pairs, "b")?,
        header_value(&pairs, "n_r")? as usize,
        header_value(&pairs, "n_t")? as usize,
    )
}

fn edge_crossing(p: (f64, f64), vp: f64, q: (f64, f64), vq: f64, t: f64) -> (f64, f64) {
    let s = if (vq - vp).abs() < f64::MIN_POSITIVE {
        0.5
    } else {
        ((t - vp) / (vq - vp)).clamp(0.0, 1.0)
    };
    (p.0 + s * (q.0 - p.0), p.1 + s * (q.1 - p.1))
}

/// Area of the part of the quad `ps` where the (vertex-linear) field exceeds t.
fn clipped_cell_area(ps: &[(f64, f64); 4], vs: &[f64; 4], t: f64) -> f64 {
    let inside = [vs[0] > t, vs[1] > t, vs[2] > t, vs[3] > t];
    if inside.iter().all(|&x| x) {
        return shoelace(&ps.to_vec());
    }
    if inside.iter().all(|&x| !x) {
        return 0.0;
    }
    let mut poly: Vec<(f64, f64)> = Vec::with_capacity(8);
    for e in 0..4 {
        if inside[e] {
            poly.push(ps[e]);
        }
        let n = (e + 1) % 4;
        if inside[e] != inside[n] {
            poly.push(edge_crossing(ps[e], vs[e], ps[n], vs[n], t));
        }
    }
    shoelace(&poly)
}

fn shoelace(poly: &Vec<(f64, f64)>) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..n {
        let (x0, y0) = poly[k];
        let (x1, y1) = poly[(k + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    0.5 * s.abs()
}

/// Convenience: 2 pi log(b/a), the integral of 1/|x|^2 over the annulus.
pub fn log_annulus_integral(a: f64, b: f64) -> f64 {
    TAU * (b / a).ln()
}

/// Area of the annulus {a < |x| < b}.
pub fn annulus_area(a: f64, b: f64) -> f64 {
    PI * (b * b - a * a)
}
