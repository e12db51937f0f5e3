//! End-to-end checks of the experiment runner: exit codes, report files and
//! byte-identical reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_twistlab")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("twistlab-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn energy_table_default_range_passes_at_full_resolution() {
    let dir = temp_dir("energy");
    let out = run_in(&dir, &["energy"]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = fs::read_to_string(dir.join("energy_table.csv")).unwrap();
    assert!(table.starts_with("k,numeric,closed_form,rel_error"));
    assert_eq!(table.lines().count(), 8); // header + k in -3..=3
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("energy_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["config"]["seed"], 0);
    assert!(report["rows"].as_array().unwrap().len() == 7);
}

#[test]
fn energy_empty_range_is_success_with_empty_table() {
    let dir = temp_dir("energy-empty");
    let cfg = dir.join("cfg");
    fs::write(&cfg, "k_min = 2\nk_max = 1\n").unwrap();
    let out = run_in(&dir, &["--config", cfg.to_str().unwrap(), "energy"]);
    assert!(out.status.success());
    let table = fs::read_to_string(dir.join("energy_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1); // header only
}

#[test]
fn invalid_geometry_exits_with_code_two() {
    let dir = temp_dir("badgeom");
    let cfg = dir.join("cfg");
    fs::write(&cfg, "a = 2.0\nb = 1.0\n").unwrap();
    let out = run_in(&dir, &["--config", cfg.to_str().unwrap(), "energy"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("a/b"), "stderr: {msg}");
}

#[test]
fn torus_rejects_small_major_radius() {
    let dir = temp_dir("badrho");
    let cfg = dir.join("cfg");
    fs::write(&cfg, "rho = 0.9\n").unwrap();
    let out = run_in(&dir, &["--config", cfg.to_str().unwrap(), "torus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho"));
}

#[test]
fn loop_solve_odd_dimension_with_winding_fails_validation() {
    let dir = temp_dir("oddloop");
    let cfg = dir.join("cfg");
    fs::write(&cfg, "loop_n = 3\nloop_k = 1\n").unwrap();
    let out = run_in(&dir, &["--config", cfg.to_str().unwrap(), "loop-solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no twist solution"));
}

#[test]
fn corrupted_map_file_fails_validation_naming_the_invariant() {
    let dir = temp_dir("badmap");
    // a small map whose outer boundary ring is rotated away from the identity
    let mut csv = String::from("# a=1 b=2 n_r=5 n_t=8\n");
    for i in 0..5 {
        let r = 1.0 + 0.25 * i as f64;
        for j in 0..8 {
            let theta = std::f64::consts::TAU * j as f64 / 8.0;
            let phi = if i == 4 { theta + 0.5 } else { theta };
            csv.push_str(&format!("{i},{j},{},{}\n", r * phi.cos(), r * phi.sin()));
        }
    }
    let map_path = dir.join("map.csv");
    fs::write(&map_path, csv).unwrap();
    let cfg = dir.join("cfg");
    fs::write(
        &cfg,
        format!("map_file = {}\nn_r = 5\nn_t = 8\n", map_path.display()),
    )
    .unwrap();
    let out = run_in(&dir, &["--config", cfg.to_str().unwrap(), "symmetrise"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("boundary trace"), "stderr: {msg}");
}

#[test]
fn symmetrise_accepts_a_valid_stored_twist() {
    let dir = temp_dir("goodmap");
    // write a clean twist map through the library, then feed it back in
    let grid = twistlab::grid::AnnulusGrid::new(1.0, 2.0, 33, 32).unwrap();
    let (map, _) = twistlab::maps::make_twist_2d(grid, 1);
    let map_path = dir.join("twist.csv");
    map.save_csv(&map_path).unwrap();
    let cfg = dir.join("cfg");
    fs::write(
        &cfg,
        format!(
            "map_file = {}\nn_r = 33\nn_t = 32\nsymmetrise_margin_tol = 1e-2\n",
            map_path.display()
        ),
    )
    .unwrap();
    let out = run_in(&dir, &["--config", cfg.to_str().unwrap(), "symmetrise"]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("symmetrise_report.json").exists());
    assert!(dir.join("coarea_levels.csv").exists());
    assert!(dir.join("angular_identity.csv").exists());
}

#[test]
fn verify_module_filter_and_byte_identical_reruns() {
    let dir = temp_dir("verify");
    let cfg = dir.join("cfg");
    fs::write(&cfg, "n_r = 65\nn_t = 64\nflow_steps = 50\ntorus_n = 32\n").unwrap();
    let args = [
        "--config",
        cfg.to_str().unwrap(),
        "--module",
        "topology",
        "--seed",
        "7",
        "verify",
    ];
    let out1 = run_in(&dir, &args);
    assert!(
        out1.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out1.stderr)
    );
    let report1 = fs::read(dir.join("verify_report.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_slice(&report1).unwrap();
    assert_eq!(parsed["config"]["seed"], 7);
    for entry in parsed["results"].as_array().unwrap() {
        assert_eq!(entry["module"], "topology");
    }
    let out2 = run_in(&dir, &args);
    assert!(out2.status.success());
    let report2 = fs::read(dir.join("verify_report.json")).unwrap();
    assert_eq!(report1, report2, "verify reruns must be byte-identical");
    assert_eq!(out1.stdout, out2.stdout);
}

#[test]
fn tightened_tolerance_surfaces_expected_failures() {
    let dir = temp_dir("tight");
    let cfg = dir.join("cfg");
    // a symmetrisation margin below the discretization floor must fail and
    // exit 1: the floor is real, the report names the failing check
    fs::write(
        &cfg,
        "n_r = 65\nn_t = 64\nflow_steps = 50\ntorus_n = 32\nsymmetrise_margin_tol = -1e-9\n",
    )
    .unwrap();
    let out = run_in(
        &dir,
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--module",
            "symmetrise",
            "verify",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "negative tolerance is a config error");

    fs::write(
        &cfg,
        "n_r = 65\nn_t = 64\nflow_steps = 50\ntorus_n = 32\nsymmetrise_margin_tol = 1e-12\n",
    )
    .unwrap();
    let out = run_in(
        &dir,
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--module",
            "symmetrise",
            "verify",
        ],
    );
    // 1e-12 sits below the floor only if some map's energy strictly rises;
    // symmetrisation strictly decreases energy here, so accept either a pass
    // or a listed failure, but require a report either way
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    assert!(dir.join("verify_report.json").exists());
}

#[test]
fn seeded_extra_suite_is_deterministic_and_seed_dependent() {
    let dir = temp_dir("seeded");
    let cfg = dir.join("cfg");
    fs::write(
        &cfg,
        "n_r = 33\nn_t = 32\nflow_steps = 30\nsuite_extra = 2\nsymmetrise_margin_tol = 1e-2\n",
    )
    .unwrap();
    let args = ["--config", cfg.to_str().unwrap(), "--seed", "11", "symmetrise"];
    let out1 = run_in(&dir, &args);
    assert!(
        out1.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out1.stderr)
    );
    let rows1 = fs::read(dir.join("symmetrise_rows.csv")).unwrap();
    let out2 = run_in(&dir, &args);
    assert!(out2.status.success());
    let rows2 = fs::read(dir.join("symmetrise_rows.csv")).unwrap();
    assert_eq!(rows1, rows2, "same seed, same rows");

    let args3 = ["--config", cfg.to_str().unwrap(), "--seed", "12", "symmetrise"];
    let out3 = run_in(&dir, &args3);
    assert!(out3.status.success());
    let rows3 = fs::read(dir.join("symmetrise_rows.csv")).unwrap();
    assert_ne!(rows1, rows3, "different seed, different sampled rows");
}

#[test]
fn el_check_and_torus_reports_exist() {
    let dir = temp_dir("elreport");
    let cfg = dir.join("cfg");
    fs::write(
        &cfg,
        "n_r = 65\nn_t = 64\ntorus_n = 32\ndump_fields = true\n",
    )
    .unwrap();
    let out = run_in(&dir, &["--config", cfg.to_str().unwrap(), "el-check"]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("el_report.json")).unwrap()).unwrap();
    assert!(report["summary"]["max_curl"].is_number());
    assert!(report["summary"]["path_defect"].is_number());
    assert!(dir.join("el_pressure.csv").exists());

    let out = run_in(&dir, &["--config", cfg.to_str().unwrap(), "torus"]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("torus_report.json")).unwrap()).unwrap();
    assert!(report["iterations"].is_number());
    assert!(report["curl_residual_max"].is_number());
    assert!(dir.join("torus_curl_residual.csv").exists());
}
