//! End-to-end runs of the `cocycle` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cocycle(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cocycle")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn presets_complete_with_their_documented_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let listed = cocycle(tmp.path(), &["presets"]);
    assert!(listed.status.success());
    for name in ["ou-linear", "saddle-oracle", "burgers-highnu", "contraction", "gbm"] {
        assert!(stdout(&listed).contains(name));
        let o = cocycle(tmp.path(), &["run", "--preset", name, "--out", name]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
        assert!(tmp.path().join(name).join("manifest.json").exists());
        assert!(!tmp.path().join(name).join(".lock").exists());
    }

    let ou: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("ou-linear/spectrum/lyapunov.json")).unwrap()).unwrap();
    let exps: Vec<f64> =
        ou["report"]["exponents"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    for (l, mu) in exps.iter().zip([1.0, 2.0, 3.0]) {
        assert!((l + mu).abs() < 1e-8, "{exps:?}");
    }
    let st: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("ou-linear/stationary/summary.json")).unwrap()).unwrap();
    assert!(st["stationarity_residual"].as_f64().unwrap() < 1e-9);

    let atlas: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("saddle-oracle/manifolds/atlas.json")).unwrap()).unwrap();
    let q = &atlas["tangent_fit"]["stable"]["quadratic"];
    let coefficient = q[0][0].as_f64().unwrap();
    assert!((coefficient + 1.0 / 3.0).abs() < 1e-2, "{coefficient}");

    let burgers = tmp.path().join("burgers-highnu/stationary");
    let summary = fs::read_to_string(burgers.join("summary.json")).unwrap();
    assert!(summary.contains("\"pullback\""));
    let gap = fs::read_to_string(burgers.join("sync_gap.csv")).unwrap();
    assert!(gap.starts_with("time,gap\n") && gap.lines().count() > 10);
}

#[test]
fn reruns_produce_identical_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let a = cocycle(tmp.path(), &["run", "--preset", "contraction", "--out", "a"]);
    let b = cocycle(tmp.path(), &["--threads", "1", "run", "--preset", "contraction", "--out", "b"]);
    assert!(a.status.success() && b.status.success());
    let ma = fs::read(tmp.path().join("a/manifest.json")).unwrap();
    let mb = fs::read(tmp.path().join("b/manifest.json")).unwrap();
    assert_eq!(ma, mb);
    let line = |o: &Output| stdout(o).lines().find(|l| l.starts_with("manifest sha256")).unwrap().to_string();
    assert_eq!(line(&a), line(&b));
    let c = cocycle(tmp.path(), &["run", "--preset", "contraction", "--out", "c", "--seed", "99"]);
    assert!(c.status.success());
    assert_ne!(fs::read(tmp.path().join("c/manifest.json")).unwrap(), ma);
}

#[test]
fn verify_passes_by_default_and_reports_broken_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = cocycle(tmp.path(), &["verify"]);
    assert_eq!(ok.status.code(), Some(0), "{}{}", stdout(&ok), stderr(&ok));
    for check in ["cocycle law", "finite differences", "shift group law", "contraction ratios", "exponent sum rule"] {
        assert!(stdout(&ok).contains(check));
    }

    let preset = stdout(&cocycle(tmp.path(), &["presets", "saddle-oracle"]));
    // The state identity is bitwise exact on the grid, so only the Jacobian
    // chain rule (round-off sized) can exceed an absurd threshold.
    let broken: String = preset
        .lines()
        .map(|l| match l.split(" = ").next() {
            Some("cocycle_tol") => "cocycle_tol = 1e-30".to_string(),
            Some("jacobian_tol") => "jacobian_tol = 1e-30".to_string(),
            _ => l.to_string(),
        })
        .map(|l| l + "\n")
        .collect();
    assert_eq!(broken.matches("1e-30").count(), 2, "{preset}");
    fs::write(tmp.path().join("broken.toml"), broken).unwrap();
    let o = cocycle(tmp.path(), &["verify", "--config", "broken.toml"]);
    assert_eq!(o.status.code(), Some(3));
    let out = stdout(&o);
    let state = out.lines().find(|l| l.starts_with("cocycle law")).unwrap();
    assert!(state.contains("0.000e0") && state.contains("PASS"), "{state}");
    let row = out.lines().find(|l| l.starts_with("cocycle jacobian")).unwrap();
    assert!(row.contains("FAIL") && row.contains("1.000e-30"), "{row}");
    let measured: f64 = row.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(measured > 1e-30);
    assert!(stderr(&o).contains("1 verification check(s) failed"));
}

#[test]
fn config_errors_exit_two_before_any_computation() {
    let tmp = tempfile::tempdir().unwrap();
    let mismatch = "[model]\nh = 0.01\noperator = { kind = \"eigenvalues\", values = [1.0] }\n\n[run]\nseed = 1\nnoise_h = 0.02\n\n[pipeline]\nstages = [\"simulate\"]\n\n[output]\ndir = \"never\"\n";
    fs::write(tmp.path().join("mismatch.toml"), mismatch).unwrap();
    let o = cocycle(tmp.path(), &["run", "--config", "mismatch.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.noise_h"), "{}", stderr(&o));
    assert!(!tmp.path().join("never").exists());

    fs::write(tmp.path().join("syntax.toml"), "[model]\nh = = 1\n").unwrap();
    let o = cocycle(tmp.path(), &["verify", "--config", "syntax.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let o = cocycle(tmp.path(), &["run", "--preset", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn non_hyperbolic_spectrum_aborts_with_four_and_keeps_earlier_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    // -A + L = diag(0, -2): a vanishing exponent.
    let cfg = r#"
[model]
h = 0.01
operator = { kind = "eigenvalues", values = [1.0, 2.0] }
nonlinearity = { kind = "linear", rows = [[1.0, 0.0], [0.0, 0.0]] }
noise = { kind = "none" }

[run]
seed = 2

[pipeline]
stages = ["stationary", "spectrum", "manifolds"]

[pipeline.spectrum]
horizon = 20.0
"#;
    fs::write(tmp.path().join("flat.toml"), cfg).unwrap();
    let o = cocycle(tmp.path(), &["run", "--config", "flat.toml", "--out", "flat"]);
    assert_eq!(o.status.code(), Some(4), "{}{}", stdout(&o), stderr(&o));
    let root = tmp.path().join("flat");
    assert!(root.join("stationary/summary.json").exists());
    assert!(root.join("spectrum/lyapunov.json").exists());
    assert!(!root.join("manifolds").exists());
    let manifest = fs::read_to_string(root.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"aborted\""));
}

#[test]
fn a_locked_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("busy")).unwrap();
    fs::write(tmp.path().join("busy/.lock"), "").unwrap();
    let o = cocycle(tmp.path(), &["run", "--preset", "gbm", "--out", "busy"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("locked"), "{}", stderr(&o));
}

#[test]
fn inspect_reads_every_artifact_kind() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(cocycle(tmp.path(), &["run", "--preset", "gbm", "--out", "g"]).status.success());
    let show = |p: &str| {
        let o = cocycle(tmp.path(), &["inspect", p]);
        assert!(o.status.success(), "{p}: {}", stderr(&o));
        stdout(&o)
    };
    assert!(show("g").contains("all artifact hashes match"));
    assert!(show("g/simulate/trajectory.bin").starts_with("trajectory: 51 records"));
    assert!(show("g/simulate/path.bin").starts_with("wiener path: seed 5"));
    assert!(show("g/stationary/point.bin").contains("\"Equilibrium\""));
    assert!(show("g/simulate/trajectory.csv").contains("rows: 51"));
    assert!(show("g/spectrum/lyapunov.json").contains("exponents"));
    assert!(show("g/config.toml").contains("[model]"));
    fs::write(tmp.path().join("g/spectrum/running.csv"), "tampered").unwrap();
    assert!(show("g").contains("mismatch: spectrum/running.csv"));
}
