//! Batch experiment runner for the twistlab numerical laboratory.
//!
//! Every module is exposed as a subcommand; runs are deterministic given the
//! configuration and seed, and all structured reports are JSON plus plot-ready
//! two-column CSVs. Exit codes: 0 success, 1 invariant failure, 2 for
//! configuration or validation errors.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Config, ConfigError};
use twistlab::energy::{energy_f, energy_f_twist_closed_form};
use twistlab::euler_lagrange::{el_residual, solve_loop_ode};
use twistlab::grid::AnnulusGrid;
use twistlab::maps::{make_twist_2d, PlanarMap};
use twistlab::symmetrise::{check_angular_identity, coarea_diagnostics, symmetrise};
use twistlab::topology::degree;
use twistlab::torus::{
    curl_condition_residual, solve_torus_bvp, torus_twist_energy, torus_uniqueness_check,
    TorusSpec,
};
use twistlab::verify::{build_suite, run as run_checks, sample_extra_suite, SuiteMap, VerifyConfig};

#[derive(Parser)]
#[command(
    name = "twistlab",
    about = "Numerical laboratory for twist maps on annuli and tori",
    version
)]
struct Cli {
    /// Flat key-value configuration file (see README for the schema).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides config and the TWISTLAB_OUT variable).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Random seed for sampled flow-family parameters; recorded in reports.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Grid resolution as N_R,N_T.
    #[arg(long, global = true, value_name = "N_R,N_T")]
    resolution: Option<String>,

    /// Restrict `verify` to a single module.
    #[arg(long, global = true, value_name = "NAME")]
    module: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Twist energies against the closed form over a k range.
    Energy,
    /// Symmetrise the generated test-map suite (or a map file) and report
    /// degree preservation and energy margins.
    Symmetrise,
    /// Solve the torus boundary-value problem and its flux identities.
    Torus,
    /// Euler-Lagrange residual of a twist candidate.
    ElCheck,
    /// Solve the loop ODE two-point problem and dump the profile.
    LoopSolve,
    /// Run the full invariant and criteria suite.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match cli.config.as_deref().map(Config::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => return config_failure(&e),
    };
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(module) = cli.module {
        cfg.module = Some(module);
    }
    if let Some(res) = cli.resolution.as_deref() {
        match parse_resolution(res) {
            Ok((n_r, n_t)) => {
                cfg.n_r = n_r;
                cfg.n_t = n_t;
            }
            Err(e) => return config_failure(&e),
        }
    }
    if let Err(e) = cfg.validate() {
        return config_failure(&e);
    }
    if let Err(e) = fs::create_dir_all(&cfg.out_dir) {
        eprintln!("error: cannot create output directory: {e}");
        return ExitCode::from(2);
    }

    let outcome = match cli.command {
        Command::Energy => cmd_energy(&cfg),
        Command::Symmetrise => cmd_symmetrise(&cfg),
        Command::Torus => cmd_torus(&cfg),
        Command::ElCheck => cmd_el_check(&cfg),
        Command::LoopSolve => cmd_loop_solve(&cfg),
        Command::Verify => cmd_verify(&cfg),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn config_failure(e: &ConfigError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn parse_resolution(text: &str) -> Result<(usize, usize), ConfigError> {
    let (r, t) = text
        .split_once(',')
        .ok_or_else(|| ConfigError(format!("--resolution expects N_R,N_T, got `{text}`")))?;
    let n_r = r
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("bad N_R `{r}`")))?;
    let n_t = t
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("bad N_T `{t}`")))?;
    Ok((n_r, n_t))
}

fn write_json<P: AsRef<Path>, T: serde::Serialize>(
    path: P,
    value: &T,
) -> Result<(), Box<dyn std::error::Error>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

type CmdResult = Result<bool, Box<dyn std::error::Error>>;

fn cmd_energy(cfg: &Config) -> CmdResult {
    let grid = AnnulusGrid::new(cfg.a, cfg.b, cfg.n_r, cfg.n_t)?;
    let mut rows = Vec::new();
    let mut reports = BTreeMap::new();
    let mut all_ok = true;
    println!("{:>4} {:>18} {:>18} {:>12}", "k", "numeric", "closed form", "rel error");
    for k in cfg.k_min..=cfg.k_max {
        let (map, _) = make_twist_2d(grid, k);
        let report = energy_f(&map)?;
        let closed = energy_f_twist_closed_form(cfg.a, cfg.b, k);
        let rel = (report.value - closed).abs() / closed;
        all_ok &= rel <= cfg.rel_tol_energy;
        println!("{k:>4} {:>18.10} {closed:>18.10} {rel:>12.3e}", report.value);
        rows.push(serde_json::json!({
            "k": k,
            "numeric": report.value,
            "closed_form": closed,
            "rel_error": rel,
        }));
        reports.insert(format!("k={k}"), report);
    }
    let mut csv = String::from("k,numeric,closed_form,rel_error\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row["k"], row["numeric"], row["closed_form"], row["rel_error"]
        ));
    }
    fs::write(cfg.out_dir.join("energy_table.csv"), csv)?;
    write_json(
        cfg.out_dir.join("energy_report.json"),
        &serde_json::json!({ "config": cfg, "rows": rows, "reports": reports }),
    )?;
    Ok(all_ok)
}

fn suite_for(cfg: &Config) -> Result<Vec<SuiteMap>, Box<dyn std::error::Error>> {
    let grid = AnnulusGrid::new(cfg.a, cfg.b, cfg.n_r, cfg.n_t)?;
    if let Some(path) = &cfg.map_file {
        let map = PlanarMap::load_csv(path)?;
        // loaded maps must satisfy the admissibility invariants
        map.validate(1e-6, 1e-6)?;
        let k = degree(&map)?.k;
        return Ok(vec![SuiteMap {
            label: format!("{} (loaded)", path.display()),
            k,
            map,
        }]);
    }
    let mut suite = build_suite(grid, cfg.flow_steps)?;
    suite.extend(sample_extra_suite(
        grid,
        cfg.flow_steps,
        cfg.seed,
        cfg.suite_extra,
    )?);
    Ok(suite)
}

fn cmd_symmetrise(cfg: &Config) -> CmdResult {
    let suite = suite_for(cfg)?;
    let mut rows = Vec::new();
    let mut all_ok = true;
    println!(
        "{:<28} {:>3} {:>10} {:>10} {:>14} {:>14} {:>12} {:>5}",
        "map", "k", "deg(u)", "deg(ubar)", "F(u)", "F(ubar)", "margin", "pass"
    );
    for sm in &suite {
        let before = degree(&sm.map)?;
        let (bar, _) = symmetrise(&sm.map)?;
        let after = degree(&bar)?;
        let f_before = energy_f(&sm.map)?.value;
        let f_after = energy_f(&bar)?.value;
        let margin = (f_after - f_before) / f_before;
        let pass = before.k == after.k && margin <= cfg.symmetrise_margin_tol;
        all_ok &= pass;
        println!(
            "{:<28} {:>3} {:>10} {:>10} {:>14.6} {:>14.6} {:>12.3e} {:>5}",
            sm.label, sm.k, before.k, after.k, f_before, f_after, margin, pass
        );
        rows.push(serde_json::json!({
            "label": sm.label,
            "k": sm.k,
            "deg_before": before,
            "deg_after": after,
            "f_before": f_before,
            "f_after": f_after,
            "rel_margin": margin,
            "pass": pass,
        }));
    }
    let mut csv = String::from("label,k,deg_before,deg_after,f_before,f_after,rel_margin,pass\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row["label"].as_str().unwrap(),
            row["k"],
            row["deg_before"]["k"],
            row["deg_after"]["k"],
            row["f_before"],
            row["f_after"],
            row["rel_margin"],
            row["pass"]
        ));
    }
    fs::write(cfg.out_dir.join("symmetrise_rows.csv"), csv)?;
    write_json(
        cfg.out_dir.join("symmetrise_report.json"),
        &serde_json::json!({ "config": cfg, "rows": rows, "all_pass": all_ok }),
    )?;

    // plot-ready two-column diagnostics for the first suite map
    if let Some(sm) = suite.first() {
        let d = coarea_diagnostics(&sm.map, 16)?;
        let mut csv = String::from("t,level_length\n");
        for (t, len) in d.t_samples.iter().zip(d.level_lengths.iter()) {
            csv.push_str(&format!("{t},{len}\n"));
        }
        fs::write(cfg.out_dir.join("coarea_levels.csv"), csv)?;
        let a = check_angular_identity(&sm.map)?;
        let mut csv = String::from("r,residual\n");
        for (r, res) in &a.residuals {
            csv.push_str(&format!("{r},{res}\n"));
        }
        fs::write(cfg.out_dir.join("angular_identity.csv"), csv)?;
    }
    println!(
        "suite: {}",
        if all_ok { "all rows pass" } else { "FAILURES present" }
    );
    Ok(all_ok)
}

fn cmd_torus(cfg: &Config) -> CmdResult {
    let spec = TorusSpec::new(cfg.rho, cfg.torus_a, cfg.torus_k)?;
    let (field, solve) = solve_torus_bvp(&spec, cfg.torus_n + 1, cfg.torus_n)?;
    let energy = torus_twist_energy(&field, &spec)?;
    let (curl_max, curl_field) = curl_condition_residual(&field)?;
    let flux = torus_uniqueness_check(&spec, &field)?;
    let target = std::f64::consts::TAU * spec.k as f64;
    let sup_dev = if spec.is_solid() {
        field
            .values()
            .iter()
            .map(|v| (v - target).abs())
            .fold(0.0_f64, f64::max)
    } else {
        f64::NAN
    };
    let lo = 0.0f64.min(target);
    let hi = 0.0f64.max(target);
    let max_principle = field.min() >= lo - 1e-8 && field.max() <= hi + 1e-8;
    let pass = max_principle
        && flux.net_flux.abs() <= 1e-6 * flux.dirichlet_fv.max(1.0)
        && (spec.k == 0 || flux.energy_flux_residual <= 1e-6);

    println!(
        "torus solve rho={} a={} k={}: {} iterations, residual {:.3e}",
        spec.rho, spec.a, spec.k, solve.iterations, solve.residual
    );
    if spec.is_solid() {
        println!("solid torus: sup|g - 2 pi k| = {sup_dev:.3e}");
    }
    println!(
        "energy {:.6} (dirichlet {:.6}), curl residual max {curl_max:.3e}, max principle {max_principle}",
        energy.value,
        energy.term("dirichlet")
    );

    field.save_csv(cfg.out_dir.join("torus_field.csv"), spec.k)?;
    curl_field.save_csv(cfg.out_dir.join("torus_curl_residual.csv"), spec.k)?;
    write_json(
        cfg.out_dir.join("torus_report.json"),
        &serde_json::json!({
            "config": cfg,
            "iterations": solve.iterations,
            "residual": solve.residual,
            "energy": energy,
            "curl_residual_max": curl_max,
            "flux": flux,
            "max_principle": max_principle,
            "sup_deviation_solid": if sup_dev.is_nan() { None } else { Some(sup_dev) },
        }),
    )?;

    // optional (rho, a) sweep of the curl residual
    if !cfg.rho_sweep.is_empty() {
        let a_values = if cfg.a_sweep.is_empty() {
            vec![cfg.torus_a]
        } else {
            cfg.a_sweep.clone()
        };
        let mut csv = String::from("rho,a,curl_residual_max,dirichlet\n");
        for &rho in &cfg.rho_sweep {
            for &av in &a_values {
                let spec = TorusSpec::new(rho, av, cfg.torus_k)?;
                let (f, _) = solve_torus_bvp(&spec, cfg.torus_n + 1, cfg.torus_n)?;
                let (cmax, _) = curl_condition_residual(&f)?;
                let e = torus_twist_energy(&f, &spec)?;
                csv.push_str(&format!("{rho},{av},{cmax},{}\n", e.term("dirichlet")));
            }
        }
        fs::write(cfg.out_dir.join("torus_sweep.csv"), csv)?;
    }
    Ok(pass)
}

fn cmd_el_check(cfg: &Config) -> CmdResult {
    let grid = AnnulusGrid::new(cfg.a, cfg.b, cfg.n_r, cfg.n_t)?;
    let (map, _) = make_twist_2d(grid, cfg.el_k);
    let res = el_residual(&map)?;
    println!(
        "el-check twist k={}: max curl {:.3e}, path defect {:.3e}",
        cfg.el_k, res.max_curl, res.path_defect
    );
    write_json(
        cfg.out_dir.join("el_report.json"),
        &serde_json::json!({ "config": cfg, "summary": res.summary_json() }),
    )?;
    if cfg.dump_fields {
        res.g1.save_csv(cfg.out_dir.join("el_g1.csv"))?;
        res.g2.save_csv(cfg.out_dir.join("el_g2.csv"))?;
        res.curl.save_csv(cfg.out_dir.join("el_curl.csv"))?;
        res.pressure.save_csv(cfg.out_dir.join("el_pressure.csv"))?;
    }
    Ok(true)
}

fn cmd_loop_solve(cfg: &Config) -> CmdResult {
    let (profile, gdot) = solve_loop_ode(cfg.a, cfg.b, cfg.loop_n, cfg.loop_k, cfg.loop_nodes)?;
    profile.save_csv(cfg.out_dir.join("loop_profile.csv"))?;
    let c0 = gdot[0] * profile.radii()[0].powi(cfg.loop_n as i32 - 1);
    let mut conservation: f64 = 0.0;
    for (r, v) in profile.radii().iter().zip(gdot.iter()) {
        conservation = conservation.max((r.powi(cfg.loop_n as i32 - 1) * v - c0).abs());
    }
    println!(
        "loop-solve n={} k={}: g(b) = {:.12}, r^(n-1) g_dot drift {conservation:.3e}",
        cfg.loop_n,
        cfg.loop_k,
        profile.angles().last().unwrap()
    );
    write_json(
        cfg.out_dir.join("loop_report.json"),
        &serde_json::json!({
            "config": cfg,
            "g_outer": profile.angles().last(),
            "speed_constant": c0,
            "conservation_drift": conservation,
        }),
    )?;
    Ok(true)
}

fn cmd_verify(cfg: &Config) -> CmdResult {
    let vconfig = VerifyConfig {
        a: cfg.a,
        b: cfg.b,
        n_r: cfg.n_r,
        n_t: cfg.n_t,
        flow_steps: cfg.flow_steps,
        torus_n: cfg.torus_n,
        symmetrise_margin_tol: cfg.symmetrise_margin_tol,
        seed: cfg.seed,
        module: cfg.module.clone(),
    };
    let results = run_checks(&vconfig)?;
    let mut all_ok = true;
    let mut stdout = std::io::stdout().lock();
    for r in &results {
        writeln!(stdout, "{}", r.line())?;
        all_ok &= r.passed;
    }
    writeln!(
        stdout,
        "verify: {} checks, {}",
        results.len(),
        if all_ok { "all passed" } else { "FAILURES present" }
    )?;
    write_json(
        cfg.out_dir.join("verify_report.json"),
        &serde_json::json!({ "config": vconfig, "results": results }),
    )?;
    Ok(all_ok)
}
