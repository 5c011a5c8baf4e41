mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use crashmle::lrtest::LrTestResult;
use crashmle::mle::FitResult;
use crashmle::synth::DgpConfig;

fn crashmle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crashmle"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the DGP config and its spec, simulates the data and returns the
/// (data, spec) paths.
fn prepare(dir: &Path, name: &str, cfg: &DgpConfig) -> (PathBuf, PathBuf) {
    let dgp = dir.join(format!("{name}.dgp.json"));
    let spec = dir.join(format!("{name}.ini"));
    let data = dir.join(format!("{name}.csv"));
    std::fs::write(&dgp, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    std::fs::write(&spec, cfg.spec.to_ini()).unwrap();
    let out = crashmle(&["simulate", "--dgp", s(&dgp), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join(format!("{name}.csv.manifest.json")).exists());
    (data, spec)
}

#[test]
fn version_and_help() {
    let out = crashmle(&["--version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
    let out = crashmle(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["fit", "effects", "lrtest", "influence", "simulate"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn fit_writes_table_json_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (data, spec) = prepare(dir.path(), "mnl", &mnl_dgp(2000, 41));
    let out_dir = dir.path().join("fit");
    let out = crashmle(&["fit", "--data", s(&data), "--spec", s(&spec), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let table = std::fs::read_to_string(out_dir.join("fit.txt")).unwrap();
    let fit = FitResult::from_json(&std::fs::read_to_string(out_dir.join("fit.json")).unwrap()).unwrap();
    for label in &fit.labels {
        let var = label.split(" [").next().unwrap();
        assert!(table.lines().any(|l| l.starts_with(var)), "{label} missing");
    }
    let footer = [
        "Log-likelihood at convergence",
        "Restricted log-likelihood",
        "Number of parameters",
        "Number of observations",
        "McFadden rho-squared",
    ];
    let positions: Vec<usize> = footer.iter().map(|f| table.find(f).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
    assert!(table.contains("Number of parameters               6"));
    assert!(table.contains("Number of observations             2000"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    assert_eq!(
        inputs[0]["sha256"].as_str().unwrap(),
        crashmle::manifest::sha256_file(&data).unwrap()
    );
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn mixed_families_need_draws() {
    let dir = tempfile::tempdir().unwrap();
    let (data, spec) = prepare(dir.path(), "mixed", &mixed_mnl_dgp(300, 42));
    let out = crashmle(&[
        "fit", "--data", s(&data), "--spec", s(&spec), "--out", s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--draws"));
}

#[test]
fn non_convergence_exits_with_two_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mnl_dgp(300, 43);
    cfg.true_params.insert("constant [fatal]".into(), 40.0);
    let (data, spec) = prepare(dir.path(), "sep", &cfg);
    let out_dir = dir.path().join("fit");
    let out = crashmle(&["fit", "--data", s(&data), "--spec", s(&spec), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    let fit = FitResult::from_json(&std::fs::read_to_string(out_dir.join("fit.json")).unwrap()).unwrap();
    assert!(!fit.converged);
}

#[test]
fn effects_follow_the_fitted_family() {
    let dir = tempfile::tempdir().unwrap();
    let (data, spec) = prepare(dir.path(), "nb", &nb_dgp(1000, 44));
    let fit_dir = dir.path().join("fit");
    assert!(crashmle(&["fit", "--data", s(&data), "--spec", s(&spec), "--out", s(&fit_dir)])
        .status
        .success());
    let eff = dir.path().join("eff");
    let out = crashmle(&[
        "effects", "--fit", s(&fit_dir.join("fit.json")), "--data", s(&data),
        "--continuous", "x1,x3", "--indicator", "x2", "--out", s(&eff),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(eff.join("effects.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.contains("marginal"));

    let (sdata, sspec) = prepare(dir.path(), "mnl", &mnl_dgp(1000, 45));
    let sfit = dir.path().join("sfit");
    assert!(crashmle(&["fit", "--data", s(&sdata), "--spec", s(&sspec), "--out", s(&sfit)])
        .status
        .success());
    let seff = dir.path().join("seff");
    let out = crashmle(&[
        "effects", "--fit", s(&sfit.join("fit.json")), "--data", s(&sdata),
        "--continuous", "x1", "--indicator", "x4", "--out", s(&seff),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(seff.join("effects.json")).unwrap()).unwrap();
    assert_eq!(report["entries"].as_array().unwrap().len(), 6);

    let out = crashmle(&[
        "effects", "--fit", s(&sfit.join("fit.json")), "--data", s(&sdata),
        "--continuous", "speed", "--out", s(&dir.path().join("bad")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn lrtest_reports_both_p_values_and_a_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let (data, spec) = prepare(dir.path(), "null", &null_split_dgp(200, 46));
    let out_dir = dir.path().join("lr");
    let out = crashmle(&[
        "lrtest", "--data", s(&data), "--spec", s(&spec), "--split", "flag", "--mc", "100",
        "--seed", "7", "--bins", "20", "--out", s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: LrTestResult =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("lrtest.json")).unwrap()).unwrap();
    assert!((0.0..=1.0).contains(&r.p_asymptotic));
    assert!(r.p_mc.is_some_and(|p| (0.0..=1.0).contains(&p)));
    assert_eq!(r.dof, 3);
    let hist = std::fs::read_to_string(out_dir.join("histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_left,bin_right,count\n"));
    assert_eq!(hist.lines().count(), 21);
    let text = std::fs::read_to_string(out_dir.join("lrtest.txt")).unwrap();
    assert!(text.contains("p (Monte-Carlo)"));

    let asymptotic = dir.path().join("lr0");
    let out = crashmle(&[
        "lrtest", "--data", s(&data), "--spec", s(&spec), "--split", "flag", "--out", s(&asymptotic),
    ]);
    assert!(out.status.success());
    let r0: LrTestResult =
        serde_json::from_str(&std::fs::read_to_string(asymptotic.join("lrtest.json")).unwrap()).unwrap();
    assert!(r0.p_mc.is_none());
    assert_eq!(r0.x2, r.x2);
}

#[test]
fn influence_writes_profile() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = influence_dgp(1500, 47, 0.5);
    cfg.influence = None;
    let raw = crashmle::synth::simulate(&influence_dgp(1500, 47, 0.5)).unwrap();
    let data = dir.path().join("infl.csv");
    raw.save_csv(&data).unwrap();
    let spec = dir.path().join("infl.ini");
    std::fs::write(&spec, cfg.spec.to_ini()).unwrap();
    let out_dir = dir.path().join("inf");
    let out = crashmle(&[
        "influence", "--data", s(&data), "--spec", s(&spec), "--distance", "d", "--dmin", "0.1",
        "--dmax", "1.0", "--step", "0.1", "--out", s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("profile.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let p: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("profile.json")).unwrap()).unwrap();
    let d_star = p["d_star"].as_f64().unwrap();
    assert!((d_star - 0.5).abs() <= 0.1 + 1e-9, "{d_star}");
    assert_eq!(p["segment_length"].as_f64().unwrap(), 2.0 * d_star);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let (data, spec) = prepare(dir.path(), "mixed", &mixed_mnl_dgp(400, 48));
    let run = |threads: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let out = crashmle(&[
            "--threads", threads, "fit", "--data", s(&data), "--spec", s(&spec), "--draws", "40",
            "--seed", "2", "--out", s(&out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("fit.json")).unwrap()
    };
    assert_eq!(run("1", "a"), run("3", "b"));
}

#[test]
fn bad_inputs_fail_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = crashmle(&[
        "fit", "--data", "/nonexistent.csv", "--spec", "/nonexistent.ini", "--out", s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    let spec = dir.path().join("bad.ini");
    std::fs::write(&spec, "[model]\nfamily = mnl\ncolour = red\n").unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "x,severity\n1,fatal\n").unwrap();
    let out = crashmle(&["fit", "--data", s(&data), "--spec", s(&spec), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}
