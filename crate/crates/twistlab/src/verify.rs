//! The full invariant suite: every acceptance criterion and module invariant,
//! run at a configured resolution, with one structured pass/fail record per
//! check. Shared by the `verify` CLI subcommand and the acceptance tests.
//!
//! Records carry no wall-clock data, so a rerun with the same configuration
//! and seed serializes byte-identically.

use std::f64::consts::{E, PI, TAU};

use crate::energy::{
    energy_f, energy_f_twist_closed_form, energy_w_twist_profile, inner_distortion, loop_energy,
    twist_inner_distortion, WeightSpec,
};
use crate::error::{Error, Result};
use crate::euler_lagrange::{check_twist_el_algebra, el_residual, solve_loop_ode};
use crate::grid::{annulus_area, log_annulus_integral, AnnulusGrid, ScalarField};
use crate::maps::{
    compose, make_flow_map, make_twist_2d, make_twist_profile_even_n, PlanarMap, StreamSpec,
    TwistProfile,
};
use crate::symmetrise::{
    check_angular_identity, check_distribution_invariance, check_jensen_ring_bound,
    check_ring_identity, coarea_diagnostics, symmetrise,
};
use crate::topology::{degree, same_class};
use crate::torus::{
    curl_condition_residual, det_identity_residual, solve_torus_bvp, torus_twist_energy,
    torus_uniqueness_check, DiscGrid, ToroidalField, TorusSpec,
};

/// Configuration of a verification run. Defaults match the acceptance setup.
#[derive(Debug, Clone, serde::Serialize)]
pub struct VerifyConfig {
    pub a: f64,
    pub b: f64,
    pub n_r: usize,
    pub n_t: usize,
    /// Flow integrator step count for the test-map family.
    pub flow_steps: usize,
    /// Torus solves run at (torus_n + 1) x torus_n.
    pub torus_n: usize,
    /// Relative slack of the symmetrisation energy non-increase check.
    pub symmetrise_margin_tol: f64,
    /// Recorded in every report; the suite itself is deterministic.
    pub seed: u64,
    /// Restrict to a single module when set.
    pub module: Option<String>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: E,
            n_r: 257,
            n_t: 256,
            flow_steps: 200,
            torus_n: 256,
            symmetrise_margin_tol: 1e-4,
            seed: 0,
            module: None,
        }
    }
}

/// Relation between the measured value and the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "reported")]
    Reported,
}

/// One verified invariant or criterion.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub module: String,
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
    pub relation: Relation,
}

impl CheckResult {
    pub fn line(&self) -> String {
        let rel = match self.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Reported => "reported",
        };
        format!(
            "[{}] {:<10} {:<52} measured {:>12.5e} {} {:>9.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.module,
            self.name,
            self.measured,
            rel,
            self.bound
        )
    }
}

struct Recorder {
    results: Vec<CheckResult>,
    filter: Option<String>,
}

impl Recorder {
    fn wants(&self, module: &str) -> bool {
        self.filter.as_deref().map_or(true, |f| f == module)
    }

    fn at_most(&mut self, module: &str, name: &str, measured: f64, bound: f64) {
        self.results.push(CheckResult {
            module: module.to_string(),
            name: name.to_string(),
            passed: measured <= bound,
            measured,
            bound,
            relation: Relation::AtMost,
        });
    }

    fn at_least(&mut self, module: &str, name: &str, measured: f64, bound: f64) {
        self.results.push(CheckResult {
            module: module.to_string(),
            name: name.to_string(),
            passed: measured >= bound,
            measured,
            bound,
            relation: Relation::AtLeast,
        });
    }

    fn report_only(&mut self, module: &str, name: &str, measured: f64) {
        self.results.push(CheckResult {
            module: module.to_string(),
            name: name.to_string(),
            passed: true,
            measured,
            bound: f64::NAN,
            relation: Relation::Reported,
        });
    }

    fn flag(&mut self, module: &str, name: &str, ok: bool) {
        self.results.push(CheckResult {
            module: module.to_string(),
            name: name.to_string(),
            passed: ok,
            measured: if ok { 1.0 } else { 0.0 },
            bound: 1.0,
            relation: Relation::AtLeast,
        });
    }
}

/// The generated test-map suite of the acceptance criteria: twelve
/// flow-composed maps spanning k in {-2..2}, eps in {0.05, 0.1} and angular
/// modes {1, 2, 3}.
pub struct SuiteMap {
    pub label: String,
    pub k: i64,
    pub map: PlanarMap,
}

pub fn build_suite(grid: AnnulusGrid, flow_steps: usize) -> Result<Vec<SuiteMap>> {
    let epsilons = [0.05, 0.1];
    let modes = [1usize, 2, 3];
    let mut flows = Vec::new();
    for &eps in &epsilons {
        for &m in &modes {
            let spec = StreamSpec::new(eps, m, 1.0, flow_steps)?;
            let (flow, _) = make_flow_map(grid, &spec)?;
            flows.push((eps, m, flow));
        }
    }
    let mut suite = Vec::new();
    let mut flow_idx = 0usize;
    for k in -2..=2i64 {
        let (twist, _) = make_twist_2d(grid, k);
        for _ in 0..2 {
            let (eps, m, flow) = &flows[flow_idx % flows.len()];
            flow_idx += 1;
            let map = compose(flow, &twist)?;
            suite.push(SuiteMap {
                label: format!("k={k} eps={eps} m={m}"),
                k,
                map,
            });
        }
    }
    // two extra rows so every (eps, m) combination appears
    for k in [0i64, 1] {
        let (twist, _) = make_twist_2d(grid, k);
        let (eps, m, flow) = &flows[flow_idx % flows.len()];
        flow_idx += 1;
        let map = compose(flow, &twist)?;
        suite.push(SuiteMap {
            label: format!("k={k} eps={eps} m={m}"),
            k,
            map,
        });
    }
    Ok(suite)
}

/// Additional flow-composed maps with parameters sampled from a seeded
/// generator: eps in [0.02, 0.12], mode in {1,2,3}, k in {-2..2}. Used by the
/// experiment runner to extend the deterministic suite; the seed is part of
/// every report.
pub fn sample_extra_suite(
    grid: AnnulusGrid,
    flow_steps: usize,
    seed: u64,
    count: usize,
) -> Result<Vec<SuiteMap>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let eps = rng.gen_range(0.02..0.12);
        let m = rng.gen_range(1..=3usize);
        let k = rng.gen_range(-2..=2i64);
        let spec = StreamSpec::new(eps, m, 1.0, flow_steps)?;
        let (flow, _) = make_flow_map(grid, &spec)?;
        let (twist, _) = make_twist_2d(grid, k);
        out.push(SuiteMap {
            label: format!("sampled k={k} eps={eps:.4} m={m}"),
            k,
            map: compose(&flow, &twist)?,
        });
    }
    Ok(out)
}

/// Run the configured checks; the returned list contains one entry per
/// criterion or invariant, most-significant criteria first per module.
pub fn run(config: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let mut rec = Recorder {
        results: Vec::new(),
        filter: config.module.clone(),
    };
    let grid = AnnulusGrid::new(config.a, config.b, config.n_r, config.n_t)?;

    if rec.wants("grid") {
        grid_checks(&mut rec, config)?;
    }
    if rec.wants("maps") {
        maps_checks(&mut rec, config, grid)?;
    }
    if rec.wants("topology") {
        topology_checks(&mut rec, config, grid)?;
    }
    if rec.wants("energy") {
        energy_checks(&mut rec, config, grid)?;
    }
    if rec.wants("symmetrise") {
        symmetrise_checks(&mut rec, config, grid)?;
    }
    if rec.wants("euler_lagrange") {
        euler_lagrange_checks(&mut rec, config)?;
    }
    if rec.wants("torus") {
        torus_checks(&mut rec, config)?;
    }
    Ok(rec.results)
}

fn grid_checks(rec: &mut Recorder, config: &VerifyConfig) -> Result<()> {
    let m = "grid";
    let (a, b) = (config.a, config.b);
    let g = AnnulusGrid::new(a, b, config.n_r, config.n_t)?;

    let unit = ScalarField::constant(g, 1.0);
    rec.at_most(
        m,
        "quadrature exact on constants",
        (unit.integrate()? - annulus_area(a, b)).abs() / annulus_area(a, b),
        1e-12,
    );

    let quad = |n: usize| -> Result<f64> {
        let gg = AnnulusGrid::new(a, b, n + 1, n)?;
        ScalarField::from_fn(gg, |r, _| 1.0 / (r * r)).integrate()
    };
    let exact = log_annulus_integral(a, b);
    let e1 = (quad(64)? - exact).abs();
    let e2 = (quad(128)? - exact).abs();
    rec.at_least(m, "quadrature Richardson order on 1/r^2", (e1 / e2).log2(), 1.9);

    let lin = ScalarField::from_fn(g, |r, _| r);
    let (dr, _) = lin.grad_polar()?;
    let lin_err = dr.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    rec.at_most(m, "radial stencil exact on linear fields", lin_err, 1e-12);

    let smooth = ScalarField::from_fn(g, |r, t| r * r * (2.0 * t).sin());
    let (fr, ft) = smooth.grad_polar()?;
    let (_, frt) = fr.grad_polar()?;
    let (ftr, _) = ft.grad_polar()?;
    let mut comm: f64 = 0.0;
    for i in 2..g.n_r() - 2 {
        for j in 0..g.n_t() {
            comm = comm.max((frt.at(i, j) - ftr.at(i, j)).abs());
        }
    }
    rec.at_most(m, "curl of discrete gradient", comm, 1e-10);

    let mut prev = f64::INFINITY;
    let mut monotone = true;
    let mut last_rel = f64::NAN;
    for n in [64usize, 128, 256] {
        let gg = AnnulusGrid::new(a, b, n + 1, n)?;
        let f = ScalarField::from_fn(gg, |r, _| r);
        let t = 0.5 * (a + b);
        let err = (f.level_set_length(t)? - TAU * t).abs();
        monotone &= err < prev;
        prev = err;
        last_rel = err / (TAU * t);
    }
    rec.flag(m, "level-set length error decays monotonically", monotone);
    rec.at_most(m, "level-set circle length (finest)", last_rel, 0.01);
    Ok(())
}

fn maps_checks(rec: &mut Recorder, config: &VerifyConfig, grid: AnnulusGrid) -> Result<()> {
    let m = "maps";
    let (a, b) = (config.a, config.b);

    let (twist, _) = make_twist_2d(grid, 2);
    let d = twist.diagnostics()?;
    rec.at_most(m, "twist boundary trace", d.boundary_trace, 1e-10);
    rec.at_most(
        m,
        "twist range defect",
        (a - d.modulus_min).max(d.modulus_max - b).max(0.0),
        1e-12,
    );

    let drift_at = |n: usize| -> Result<f64> {
        let gg = AnnulusGrid::new(a, b, n + 1, n)?;
        Ok(make_twist_2d(gg, 1).0.diagnostics()?.det_drift)
    };
    let d1 = drift_at(64)?;
    let d2 = drift_at(128)?;
    rec.at_least(m, "twist det drift refinement order", (d1 / d2).log2(), 1.7);

    let spec = StreamSpec::new(0.1, 2, 1.0, config.flow_steps)?;
    let (flow, drift) = make_flow_map(grid, &spec)?;
    rec.at_most(m, "flow map det drift (eps=0.1, m=2)", drift, 1e-3);
    rec.at_most(
        m,
        "flow map boundary trace",
        flow.diagnostics()?.boundary_trace,
        1e-10,
    );

    let (tk, pk) = make_twist_2d(grid, 2);
    let (tj, pj) = make_twist_2d(grid, 1);
    let c = compose(&tk, &tj)?;
    let mut angle_defect: f64 = 0.0;
    for i in 0..grid.n_r() {
        let expected = pk.angles()[i] + pj.angles()[i];
        for j in 0..grid.n_t() {
            let (x, y) = c.at(i, j);
            let diff = (y.atan2(x) - grid.theta(j) - expected).rem_euclid(TAU);
            angle_defect = angle_defect.max(diff.min(TAU - diff));
        }
    }
    rec.at_most(m, "compose angle addition (twist_2 o twist_1)", angle_defect, 1e-6);

    let id = PlanarMap::identity(grid);
    let dist = |eps: f64| -> Result<f64> {
        let spec = StreamSpec::new(eps, 2, 1.0, 50)?;
        let (map, _) = make_flow_map(grid, &spec)?;
        let mut worst: f64 = 0.0;
        for i in 0..grid.n_r() {
            for j in 0..grid.n_t() {
                let (x1, y1) = map.at(i, j);
                let (x2, y2) = id.at(i, j);
                worst = worst.max((x1 - x2).hypot(y1 - y2));
            }
        }
        Ok(worst)
    };
    let ratio = dist(0.02)? / dist(0.01)?;
    rec.flag(
        m,
        "flow map linear in amplitude",
        (1.7..2.3).contains(&ratio),
    );
    Ok(())
}

fn topology_checks(rec: &mut Recorder, config: &VerifyConfig, grid: AnnulusGrid) -> Result<()> {
    let m = "topology";
    let mut worst_conf: f64 = 0.0;
    let mut all_exact = true;
    for k in -8..=8i64 {
        let (map, _) = make_twist_2d(grid, k);
        let d = degree(&map)?;
        all_exact &= d.k == k;
        worst_conf = worst_conf.max(d.confidence);
    }
    rec.flag(m, "twist degrees exact for |k| <= 8", all_exact);
    rec.at_most(m, "twist raw-integer gap", worst_conf, 1e-6);

    let (t3, p3) = make_twist_2d(grid, 3);
    rec.flag(
        m,
        "inverted twist has opposite degree",
        degree(&p3.invert().to_map(grid))?.k == -3,
    );

    let spec = StreamSpec::new(0.1, 2, 1.0, config.flow_steps)?;
    let (flow, _) = make_flow_map(grid, &spec)?;
    let composed = compose(&flow, &t3)?;
    let dc = degree(&composed)?;
    rec.flag(m, "degree invariant under flow composition", dc.k == 3);
    rec.at_most(m, "flow-composed raw-integer gap", dc.confidence, 1e-3);
    rec.flag(
        m,
        "same_class distinguishes twist_1 from twist_2",
        !same_class(&make_twist_2d(grid, 1).0, &make_twist_2d(grid, 2).0)?,
    );
    Ok(())
}

fn energy_checks(rec: &mut Recorder, config: &VerifyConfig, grid: AnnulusGrid) -> Result<()> {
    let m = "energy";
    let (a, b) = (config.a, config.b);

    // criterion 1: closed-form reproduction for k in {0, +-1, +-2, 3}
    for k in [0i64, 1, -1, 2, -2, 3] {
        let (map, _) = make_twist_2d(grid, k);
        let report = energy_f(&map)?;
        let exact = energy_f_twist_closed_form(a, b, k);
        rec.at_most(
            m,
            &format!("criterion 1: F(twist_{k}) vs closed form (rel)"),
            (report.value - exact).abs() / exact,
            1e-3,
        );
        if k == 1 {
            rec.at_most(
                m,
                "decomposition consistency |direct - split|",
                report.consistency.unwrap_or(f64::NAN),
                1e-8,
            );
        }
    }

    // convergence order toward the closed form
    let err_at = |n: usize| -> Result<f64> {
        let gg = AnnulusGrid::new(a, b, n + 1, n)?;
        let (map, _) = make_twist_2d(gg, 1);
        Ok((energy_f(&map)?.value - energy_f_twist_closed_form(a, b, 1)).abs())
    };
    let e1 = err_at(64)?;
    let e2 = err_at(128)?;
    rec.at_least(m, "F(twist) refinement order", (e1 / e2).log2(), 1.7);

    // lower bound with discretization slack
    let spec = StreamSpec::new(0.1, 3, 1.0, config.flow_steps)?;
    let (flow, _) = make_flow_map(grid, &spec)?;
    for (label, map) in [("identity", PlanarMap::identity(grid)), ("flow", flow)] {
        let report = energy_f(&map)?;
        let bound = PI * (b / a).ln() + report.term("grad_modulus") + report.term("cross_radial");
        rec.at_least(
            m,
            &format!("lower bound F >= pi ln(b/a) + radial terms ({label})"),
            report.value - bound,
            -2e-3,
        );
    }

    // criterion 6: distortion duality through the reduced twist integrands
    let nodes = (1 << 16) + 1;
    for k in [-3i64, -2, -1, 1, 2, 3] {
        let p = make_twist_profile_even_n(a, b, 2, k, nodes)?;
        let w = energy_w_twist_profile(&p)?;
        let f_inv = TAU * (b / a).ln() + loop_energy(&p.invert())?;
        rec.at_most(
            m,
            &format!("criterion 6: W(twist_{k}) = F(twist_{}) ", -k),
            (w - f_inv).abs(),
            1e-6,
        );
    }
    let fine = make_twist_profile_even_n(a, b, 2, 1, nodes)?;
    let ks = twist_inner_distortion(&fine)?;
    let exact_k = 1.0 + 2.0 * PI * PI;
    let k_defect = ks
        .iter()
        .map(|v| (v - exact_k).abs())
        .fold(0.0, f64::max);
    rec.at_most(m, "criterion 6: K_I(twist_1) = 1 + 2 pi^2 pointwise", k_defect, 1e-6);

    // K_I >= 1 wherever det > 0 (exact algebraic property of the discretization)
    let spec = StreamSpec::new(0.1, 2, 1.0, config.flow_steps)?;
    let (flow, _) = make_flow_map(grid, &spec)?;
    let (k_field, _) = inner_distortion(&flow)?;
    rec.at_least(m, "K_I >= 1 pointwise", k_field.min(), 1.0 - 1e-12);
    Ok(())
}

fn symmetrise_checks(rec: &mut Recorder, config: &VerifyConfig, grid: AnnulusGrid) -> Result<()> {
    let m = "symmetrise";
    let (a, b) = (config.a, config.b);
    let suite = build_suite(grid, config.flow_steps)?;
    let log_int = log_annulus_integral(a, b);

    // criteria 2 and 3 over the full suite
    let mut degree_preserved = true;
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_minimality = f64::INFINITY;
    for sm in &suite {
        let before = degree(&sm.map)?;
        let (bar, _) = symmetrise(&sm.map)?;
        let after = degree(&bar)?;
        degree_preserved &= before.k == sm.k && after.k == sm.k;
        let f_before = energy_f(&sm.map)?.value;
        let f_after = energy_f(&bar)?.value;
        // relative energy increase; must stay below the configured slack
        worst_margin = worst_margin.max((f_after - f_before) / f_before);
        let closed = energy_f_twist_closed_form(a, b, sm.k);
        worst_minimality = worst_minimality.min((f_before - closed) / closed);
    }
    rec.flag(
        m,
        &format!(
            "criterion 2: degree preserved across {} suite maps",
            suite.len()
        ),
        degree_preserved,
    );
    rec.at_most(
        m,
        "criterion 2: max relative energy increase under symmetrisation",
        worst_margin,
        config.symmetrise_margin_tol,
    );
    rec.at_least(
        m,
        "criterion 3: in-class minimality margin (rel)",
        worst_minimality,
        -1e-3,
    );

    // criterion 4: the integral identities on every suite map
    let mut worst_73: f64 = 0.0;
    let mut worst_71: f64 = 0.0;
    let mut worst_72: f64 = 0.0;
    let mut worst_74 = f64::INFINITY;
    let radii: Vec<usize> = (1..=5).map(|q| q * (grid.n_r() - 1) / 6).collect();
    let w_one = WeightSpec::new(|_| 1.0, a, b);
    let w_t = WeightSpec::new(|t| t, a, b);
    for sm in &suite {
        worst_73 = worst_73.max(check_angular_identity(&sm.map)?.max_interior);
        let phis: [(fn(f64) -> f64, &str); 3] =
            [(|t| t * t, "t^2"), (|t| 1.0 / t, "1/t"), (|t| 1.0 / (t * t), "1/t^2")];
        for (phi, _) in phis {
            worst_71 = worst_71.max(check_distribution_invariance(&sm.map, phi)?);
        }
        for &i_r in &radii {
            // Phi = t carries the scale 2 pi (r^4 - a^4); the criterion
            // tolerance is relative to the identity's own magnitude
            let (_, rhs, res) = check_ring_identity(&sm.map, |t| t, |_| 1.0, i_r)?;
            worst_72 = worst_72.max(res / rhs.abs().max(1.0));
            for w in [&w_one, &w_t] {
                let jb = check_jensen_ring_bound(&sm.map, w, i_r)?;
                worst_74 = worst_74.min(jb.margin / jb.bound.abs().max(1.0));
            }
        }
    }
    rec.at_most(m, "criterion 4: angular winding identity residual", worst_73, 1e-3);
    rec.at_most(m, "criterion 4: distribution invariance residual", worst_71, 1e-3);
    rec.at_most(m, "criterion 4: ring identity residual (rel)", worst_72, 1e-3);
    rec.at_least(m, "criterion 4: Jensen ring margin (rel)", worst_74, -1e-3);

    // criterion 5: the coarea chain at 16 levels
    let mut iso_ok = true;
    let mut worst_log: f64 = 0.0;
    let mut worst_holder = f64::INFINITY;
    let mut worst_alpha: f64 = 0.0;
    for sm in &suite {
        let d = coarea_diagnostics(&sm.map, 16)?;
        iso_ok &= d.isoperimetric_ok.iter().all(|&ok| ok);
        worst_log = worst_log.max(d.log_integral_residual);
        worst_holder = worst_holder.min(d.holder_margin);
        for (t, alpha) in d.t_samples.iter().zip(d.distribution.iter()) {
            worst_alpha = worst_alpha.max((alpha - PI * (b * b - t * t)).abs());
        }
    }
    rec.flag(m, "criterion 5: level lengths >= 2 pi t (1%) at 16 levels", iso_ok);
    rec.at_most(m, "criterion 5: int dx/|u|^2 vs 2 pi ln(b/a)", worst_log, 1e-3);
    rec.at_least(
        m,
        "criterion 5: Hoelder link margin",
        worst_holder,
        -1e-3 * log_int * log_int,
    );
    rec.at_most(
        m,
        "distribution function matches identity profile",
        worst_alpha / annulus_area(a, b),
        1e-2,
    );

    // strict-gap spot check on one genuinely non-twist map: the energy drop
    // must be a real gap, not a rounding artifact
    let spec = StreamSpec::new(0.1, 2, 1.0, config.flow_steps)?;
    let (flow, _) = make_flow_map(grid, &spec)?;
    let (flow_bar, _) = symmetrise(&flow)?;
    let f_flow = energy_f(&flow)?.value;
    let f_bar = energy_f(&flow_bar)?.value;
    rec.at_least(
        m,
        "strict energy gap for a non-twist map (rel)",
        (f_flow - f_bar) / f_flow,
        1e-4,
    );

    // idempotence on one representative
    let (bar, _) = symmetrise(&suite[3].map)?;
    let (bar2, _) = symmetrise(&bar)?;
    let mut idem: f64 = 0.0;
    for i in 0..grid.n_r() {
        for j in 0..grid.n_t() {
            let (x1, y1) = bar.at(i, j);
            let (x2, y2) = bar2.at(i, j);
            idem = idem.max((x1 - x2).hypot(y1 - y2));
        }
    }
    rec.at_most(m, "symmetrisation idempotence defect", idem, 5e-3);
    Ok(())
}

fn euler_lagrange_checks(rec: &mut Recorder, config: &VerifyConfig) -> Result<()> {
    let m = "euler_lagrange";
    let (a, b) = (config.a, config.b);

    // criterion 7: twist defect decays at order >= 1.8; linear profile stalls
    let twist_defect = |n: usize| -> Result<f64> {
        let gg = AnnulusGrid::new(a, b, n + 1, n)?;
        let (map, _) = make_twist_2d(gg, 1);
        Ok(el_residual(&map)?.path_defect)
    };
    let d1 = twist_defect(128)?;
    let d2 = twist_defect(256)?;
    let d3 = twist_defect(512)?;
    let order = ((d1 / d2).log2() + (d2 / d3).log2()) / 2.0;
    rec.at_least(m, "criterion 7: twist path-defect decay order", order, 1.8);

    let linear_defect = |n: usize| -> Result<f64> {
        let gg = AnnulusGrid::new(a, b, n + 1, n)?;
        let map = PlanarMap::from_fn(gg, |r, t| {
            let phi = t + TAU * (r - a) / (b - a);
            (r * phi.cos(), r * phi.sin())
        });
        Ok(el_residual(&map)?.path_defect)
    };
    let l1 = linear_defect(128)?;
    let l3 = linear_defect(512)?;
    rec.at_least(
        m,
        "criterion 7: non-solution defect floor (fine/coarse)",
        l3 / l1,
        0.5,
    );

    // pressure path independence
    let gg = AnnulusGrid::new(a, b, 129, 128)?;
    let (map, _) = make_twist_2d(gg, 1);
    let res = el_residual(&map)?;
    let mut pdiff: f64 = 0.0;
    for i in 3..=gg.n_r() - 4 {
        for j in 0..gg.n_t() {
            pdiff = pdiff.max((res.pressure.at(i, j) - res.pressure_alt.at(i, j)).abs());
        }
    }
    rec.at_most(
        m,
        "pressure path independence vs defect bound",
        pdiff,
        2.0 * res.path_defect * annulus_area(a, b) + 1e-12,
    );

    // criterion 8: loop ODE against closed forms at 1025 nodes
    let (p2, gdot2) = solve_loop_ode(a, b, 2, 1, 1025)?;
    let log_ba = (b / a).ln();
    let mut defect2: f64 = 0.0;
    for (r, g) in p2.radii().iter().zip(p2.angles().iter()) {
        defect2 = defect2.max((g - TAU * (r / a).ln() / log_ba).abs());
    }
    rec.at_most(m, "criterion 8: loop ODE matches log profile (n=2)", defect2, 1e-8);

    let (p4, gdot4) = solve_loop_ode(1.0, 2.0, 4, 1, 1025)?;
    let oracle = make_twist_profile_even_n(1.0, 2.0, 4, 1, 1025)?;
    let mut defect4: f64 = 0.0;
    for (g1, g2) in p4.angles().iter().zip(oracle.angles().iter()) {
        defect4 = defect4.max((g1 - g2).abs());
    }
    rec.at_most(m, "criterion 8: loop ODE matches power profile (n=4)", defect4, 1e-8);
    rec.flag(
        m,
        "criterion 8: odd dimension with k != 0 errors",
        matches!(solve_loop_ode(1.0, 2.0, 3, 1, 65), Err(Error::NoTwistSolution(_))),
    );

    // r^(n-1) g_dot constant across nodes
    let mut cdef: f64 = 0.0;
    let c2 = gdot2[0] * p2.radii()[0];
    for (r, v) in p2.radii().iter().zip(gdot2.iter()) {
        cdef = cdef.max((r * v - c2).abs());
    }
    let c4 = gdot4[0] * p4.radii()[0].powi(3);
    for (r, v) in p4.radii().iter().zip(gdot4.iter()) {
        cdef = cdef.max((r.powi(3) * v - c4).abs());
    }
    rec.at_most(m, "loop ODE conserves r^(n-1) g_dot", cdef, 1e-10);

    // loop-energy extremality against perturbed profiles
    let base = loop_energy(&p2)?;
    let mut extremal = true;
    for mode in 1..=4 {
        let g: Vec<f64> = p2
            .radii()
            .iter()
            .zip(p2.angles().iter())
            .map(|(&r, &gv)| gv + 0.25 * (PI * mode as f64 * (r - a) / (b - a)).sin())
            .collect();
        let q = TwistProfile::from_samples(a, b, 2, p2.radii().to_vec(), g)?;
        extremal &= loop_energy(&q)? >= base;
    }
    rec.flag(m, "loop energy extremal among perturbed profiles", extremal);

    // substitution-chain algebra
    let (_, ptw) = make_twist_2d(AnnulusGrid::new(a, b, 129, 8)?, 1);
    rec.at_most(m, "twist substitution-chain identities (n=2)", check_twist_el_algebra(&ptw)?, 1e-10);
    let p4a = make_twist_profile_even_n(1.0, 2.0, 4, 2, 257)?;
    rec.at_most(m, "twist substitution-chain identities (n=4)", check_twist_el_algebra(&p4a)?, 1e-9);
    Ok(())
}

fn torus_checks(rec: &mut Recorder, config: &VerifyConfig) -> Result<()> {
    let m = "torus";
    let n = config.torus_n;

    // criterion 9a: solid torus triviality
    let solid = TorusSpec::new(4.0, 0.0, 1)?;
    let (g_solid, rep_solid) = solve_torus_bvp(&solid, n + 1, n)?;
    let mut worst: f64 = 0.0;
    for v in g_solid.values() {
        worst = worst.max((v - TAU).abs());
    }
    rec.at_most(m, "criterion 9: solid torus sup|g - 2 pi k|", worst, 1e-6);
    rec.at_most(m, "solid torus solver residual", rep_solid.residual, 1e-10);

    // criterion 9b: thickened torus
    let thick = TorusSpec::new(4.0, 0.5, 1)?;
    let (g_thick, rep_thick) = solve_torus_bvp(&thick, n + 1, n)?;
    rec.at_most(m, "thickened solver residual", rep_thick.residual, 1e-10);
    rec.at_least(m, "criterion 9: max principle (min)", g_thick.min(), -1e-8);
    rec.at_most(m, "criterion 9: max principle (max)", g_thick.max(), TAU + 1e-8);
    let flux = torus_uniqueness_check(&thick, &g_thick)?;
    rec.at_most(
        m,
        "criterion 9: flux balance (rel)",
        flux.net_flux.abs() / flux.dirichlet_fv.max(1.0),
        1e-6,
    );
    rec.at_most(
        m,
        "criterion 9: energy-flux identity (rel)",
        flux.energy_flux_residual,
        1e-6,
    );

    // criterion 9c: large-rho asymptotics
    let far = TorusSpec::new(1000.0, 0.5, 1)?;
    let (g_far, _) = solve_torus_bvp(&far, n + 1, n)?;
    let gg = g_far.grid();
    let mut dev: f64 = 0.0;
    for i in 0..gg.n_s() {
        let expected = TAU * (gg.s(i) / 0.5).ln() / 2.0_f64.ln();
        for j in 0..gg.n_psi() {
            dev = dev.max((g_far.at(i, j) - expected).abs());
        }
    }
    rec.at_most(m, "criterion 9: large-rho planar log profile (uniform)", dev, 1e-2);

    // solved-field energy sits above the constant baseline
    let report = torus_twist_energy(&g_thick, &thick)?;
    rec.at_least(
        m,
        "solved energy exceeds constant baseline",
        report.term("dirichlet"),
        1.0,
    );

    // curl-condition residual: reported, nothing asserted (open question)
    let (curl_max, _) = curl_condition_residual(&g_thick)?;
    rec.report_only(m, "thickened-torus curl-condition residual (open)", curl_max);

    // refinement convergence at order 2
    let solve = |nn: usize| -> Result<ToroidalField> { Ok(solve_torus_bvp(&thick, nn + 1, nn)?.0) };
    let coarse = solve(32)?;
    let mid = solve(64)?;
    let fine = solve(128)?;
    let diff = |c: &ToroidalField, f: &ToroidalField| -> f64 {
        let gc = c.grid();
        let mut w: f64 = 0.0;
        for i in 0..gc.n_s() {
            for j in 0..gc.n_psi() {
                w = w.max((c.at(i, j) - f.at(2 * i, 2 * j)).abs());
            }
        }
        w
    };
    let e1 = diff(&coarse, &mid);
    let e2 = diff(&mid, &fine);
    rec.at_least(m, "grid-refinement convergence order", (e1 / e2).log2(), 1.7);

    // incompressibility identity of torus twists
    let grid = DiscGrid::new(4.0, 0.5, 33, 32)?;
    let test_field = ToroidalField::from_fn(grid, |mu, x3| (2.0 * mu).cos() + 0.3 * x3);
    rec.at_most(m, "det identity <J1 x, grad g> = 0", det_identity_residual(&test_field), 1e-12);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_filter_restricts_results() {
        let config = VerifyConfig {
            n_r: 65,
            n_t: 64,
            flow_steps: 50,
            torus_n: 32,
            module: Some("grid".to_string()),
            ..Default::default()
        };
        let results = run(&config).unwrap();
        assert!(!results.is_empty());
        assert!(results.iter().all(|r| r.module == "grid"));
    }

    #[test]
    fn suite_covers_all_parameters() {
        let grid = AnnulusGrid::new(1.0, E, 33, 32).unwrap();
        let suite = build_suite(grid, 20).unwrap();
        assert!(suite.len() >= 12);
        for k in -2..=2i64 {
            assert!(suite.iter().any(|s| s.k == k), "missing k={k}");
        }
        for eps in ["eps=0.05", "eps=0.1"] {
            assert!(suite.iter().any(|s| s.label.contains(eps)));
        }
        for m in ["m=1", "m=2", "m=3"] {
            assert!(suite.iter().any(|s| s.label.contains(m)));
        }
    }
}
