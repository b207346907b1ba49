use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn hydrocouple(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hydrocouple"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .next()
        .unwrap_or_default()
        .to_string()
}

const SHORT_TRENCH: [&str; 5] = [
    "simulate",
    "trench-loam",
    "--override",
    "coupling.n_steps=12",
    "--override=rain.cutoff=360",
];

#[test]
fn analyze_physics_writes_full_grid() {
    let dir = TempDir::new().unwrap();
    let out = hydrocouple(dir.path(), &["analyze", "physics", "--points", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("analyze.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "c,K,dt,dz,a,b,alpha,S,abs_S,omega_opt");
    assert_eq!(lines.count(), 25);
}

#[test]
fn linrun_reports_optimal_relaxation() {
    let dir = TempDir::new().unwrap();
    let out = hydrocouple(
        dir.path(),
        &["linrun", "--dt", "0.1", "--elements", "10", "--omega", "0.5,opt"],
    );
    assert!(out.status.success());
    let overview = fs::read_to_string(dir.path().join("linrun_overview.csv")).unwrap();
    let rows: Vec<Vec<&str>> = overview.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    // K_1 column for the optimally relaxed run
    assert_eq!(rows[1][4], "2");
    assert_eq!(rows[1][5], "NA");
    assert_eq!(header(&dir.path().join("linrun_0_trace.csv")), "n,k,psi_gamma,residual");
}

#[test]
fn linrun_divergence_exits_with_3() {
    let dir = TempDir::new().unwrap();
    let out = hydrocouple(
        dir.path(),
        &["linrun", "--dt", "1", "--elements", "500", "--max-iters", "5"],
    );
    assert_eq!(out.status.code(), Some(3));
    // the partial trace is still written
    assert!(dir.path().join("linrun_0_trace.csv").exists());
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    for args in [
        &["simulate", "no-such-scenario"][..],
        &["simulate", "trench-loam", "--override", "coupling.n_steps=10"],
        &["simulate", "trench-loam", "--override", "coupling.omega=1.5"],
        &["simulate", "trench-loam", "--override", "geometry.unknown=1"],
        &["--workers", "0", "presets"],
    ] {
        let out = hydrocouple(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn simulate_writes_traces_probes_and_snapshots() {
    let dir = TempDir::new().unwrap();
    let out = hydrocouple(dir.path(), &SHORT_TRENCH);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let p = dir.path();
    assert_eq!(
        header(&p.join("trench-loam_trace.csv")),
        "n,t,K_n,res_first,res_last,CR_n,c_bar,K_bar,abs_S_pred,omega_opt_pred,c_guard"
    );
    assert_eq!(header(&p.join("trench-loam_probe.csv")), "t,h0,u0,q_out");
    assert_eq!(header(&p.join("summary.csv")), "scenario,CR,undefined_count,excluded_count");
    for step in [0, 10] {
        let snap = p.join(format!("trench-loam_field_{step:06}.csv"));
        assert_eq!(header(&snap), "x,z,psi,theta,K");
        // 6 × 9 nodes
        assert_eq!(fs::read_to_string(&snap).unwrap().lines().count(), 1 + 54);
    }
    let trace = fs::read_to_string(p.join("trench-loam_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 12);
}

#[test]
fn reruns_are_bit_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert!(hydrocouple(a.path(), &SHORT_TRENCH).status.success());
    assert!(hydrocouple(b.path(), &SHORT_TRENCH).status.success());
    for file in ["trench-loam_trace.csv", "trench-loam_probe.csv", "summary.csv"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn config_file_with_overrides_matches_preset() {
    let dir = TempDir::new().unwrap();
    let show = hydrocouple(dir.path(), &["presets", "--show", "trench-clay"]);
    assert!(show.status.success());
    let cfg = dir.path().join("clay.toml");
    fs::write(&cfg, &show.stdout).unwrap();

    let from_file = dir.path().join("file");
    let from_preset = dir.path().join("preset");
    let overrides = ["--override", "coupling.n_steps=5", "--override", "rain.cutoff=180"];
    let mut args = vec!["simulate", "--config", cfg.to_str().unwrap()];
    args.extend(overrides);
    assert!(hydrocouple(&from_file, &args).status.success());
    let mut args = vec!["simulate", "trench-clay"];
    args.extend(overrides);
    assert!(hydrocouple(&from_preset, &args).status.success());
    assert_eq!(
        fs::read(from_file.join("trench-clay_trace.csv")).unwrap(),
        fs::read(from_preset.join("trench-clay_trace.csv")).unwrap()
    );
}
