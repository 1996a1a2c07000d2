use std::path::Path;
use std::process::{Command, Output};

use shadowprice_cli::config::SliceRequest;
use shadowprice_cli::{run, Category, RunConfig, SliceAxis};

const BIN: &str = env!("CARGO_BIN_EXE_shadowprice");

fn shadowprice(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn error_category(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["error"]["category"].as_str().unwrap().to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "[grid]\nnz = 32\nny = 24\n[run]\nskip_sim = true\n";

#[test]
fn missing_config_exits_with_config_code() {
    let out = shadowprice(&["--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_category(&out), "config");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[model]\nsigmaa = 0.2\n");
    let out = shadowprice(&["--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nonpositive_xi_exits_with_well_posedness_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[model]\ngamma = 0.5\nbeta = 0.001\nr = 0.2\nb = 0.21\n");
    let out = shadowprice(&["--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_category(&out), "well-posedness");
}

#[test]
fn query_outside_the_grid_exits_with_range_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{SMALL}[[queries]]\nw0 = 10.0\ny0 = 1000.0\n"));
    let out_dir = dir.path().join("out");
    let out = shadowprice(&["--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_category(&out), "range");
}

#[test]
fn exhausted_iteration_budget_exits_with_non_convergence_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{SMALL}[solver]\nmax_inner = 3\nmax_outer = 2\n"));
    let out_dir = dir.path().join("out");
    let out = shadowprice(&["--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_category(&out), "non-convergence");
}

#[test]
fn run_writes_every_output_with_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out = shadowprice(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "--rho-sweep", "-1,0.999"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let header = |f: &str| std::fs::read_to_string(out_dir.join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("solution.csv"), "z,y,phi,phi_z,wealth,region,theta2");
    assert_eq!(header("boundary.csv"), "y,z_star,w_star_I,w_star_grad");
    assert_eq!(header("rho_compare.csv"), "rho,scaled_sup_diff,abs_sup_diff");
    assert_eq!(std::fs::read_to_string(out_dir.join("solution.csv")).unwrap().lines().count(), 1 + 32 * 24);
    assert!(out_dir.join("rho_-1/solution.csv").exists() && out_dir.join("rho_0.999/boundary.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    for key in ["config", "params", "constants", "queries", "diagnostics", "duality"] {
        assert!(summary.get(key).is_some(), "{key}");
    }
    assert_eq!(summary["constants"]["xi"], 0.04);
    let checks: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("checks.json")).unwrap()).unwrap();
    assert!(checks["checks"].as_array().unwrap().iter().all(|c| c["tolerance"].is_number()));
}

#[test]
fn summary_echo_replays_to_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(shadowprice(&["--config", &cfg, "--out", a.to_str().unwrap(), "--sequential"]).status.success());
    let echo = a.join("summary.json");
    assert!(shadowprice(&["--config", echo.to_str().unwrap(), "--out", b.to_str().unwrap()]).status.success());
    for f in ["solution.csv", "boundary.csv", "summary.json", "checks.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn configured_slices_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::parse(SMALL).unwrap();
    config.output.dir = dir.path().join("out").to_string_lossy().into_owned();
    config.output.slices = vec![SliceRequest { axis: SliceAxis::Y, value: 2.0 }, SliceRequest { axis: SliceAxis::Z, value: 1.0 }];
    let report = run(&config).unwrap();
    let rows = std::fs::read_to_string(report.out_dir.join("slice_y_2.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 32);
    assert_eq!(std::fs::read_to_string(report.out_dir.join("slice_z_1.csv")).unwrap().lines().count(), 1 + 24);
}

#[test]
fn out_of_range_slice_is_a_range_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::parse(SMALL).unwrap();
    config.output.dir = dir.path().join("out").to_string_lossy().into_owned();
    config.output.slices = vec![SliceRequest { axis: SliceAxis::Y, value: 1e9 }];
    assert_eq!(run(&config).unwrap_err().category, Category::Range);
}
