use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use hankel_arma_cli::{exit, Cli, SEED_ENV};
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_hankel-arma");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/arma21").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(BIN).args(args).arg("--out").arg(out).env_remove(SEED_ENV).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--p", "1", "--a", "0.5", "--T", "1000", "--seed", "7"];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&args, &a).status.success());
    assert!(run(&args, &b).status.success());
    let csv = fs::read(a.join("trajectory.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("trajectory.csv")).unwrap());
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1002);
}

#[test]
fn estimate_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (traj, model) = (fixture("trajectory.csv"), fixture("model.json"));
    let out = dir.path().join("est");
    let res = run(
        &[
            "estimate",
            "--eta",
            "auto",
            "--nu",
            "2.0",
            "--t",
            "10",
            "--order-threshold",
            "0.05",
            "--input",
            traj.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
        ],
        &out,
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = json(&out.join("estimate.json"));
    assert_eq!(report["p_hat"], 2);
    assert_eq!(report["eta_source"], "auto");
    assert_eq!(report["feasible"], true);
    assert!(report["residual_fro"].as_f64().unwrap() > 0.0);
    let sv: Vec<f64> = serde_json::from_value(report["singular_values"].clone()).unwrap();
    assert_eq!(sv.len(), 10);
    for (got, want) in sv.iter().zip([2.590175172792546, 0.7144520539748217]) {
        assert!((got - want).abs() <= 1e-6 * want, "{got} vs {want}");
    }
    assert!(sv[2] <= 1e-10 * sv[0]);

    let rz = dir.path().join("rz");
    let res =
        run(&["realize", "--order-threshold", "0.05", "--estimate", out.join("estimate.csv").to_str().unwrap()], &rz);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let real = json(&rz.join("realization.json"));
    assert_eq!(real["p_hat"], 2);
    assert_eq!(real["ill_conditioned"], false);
}

#[test]
fn bounds_records_optimal_xi() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let res = run(
        &["bounds", "--xi", "optimize", "--p", "1", "--a", "0.3", "--t", "5", "--T", "10000", "--nu", "2", "--c", "1"],
        &out,
    );
    assert!(res.status.success());
    let report = json(&out.join("bounds.json"));
    assert_eq!(report["xi_optimized"], true);
    assert_eq!(report["rank_ok"], 1);
    let lambda = report["Lambda"].as_f64().unwrap();
    assert!((lambda - 6.75183492997043).abs() <= 1e-9 * lambda, "{lambda}");
    assert!(report["xi"].as_f64().unwrap() > 0.0);
    assert_eq!(report["provenance"]["Lambda"], "closed-form");
}

#[test]
fn help_lists_every_knob_with_default() {
    let cmd = Cli::command();
    for sub in cmd.get_subcommands() {
        for arg in sub.get_arguments() {
            let id = arg.get_id().as_str();
            if id == "help" || id == "version" {
                continue;
            }
            let help = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
            assert!(
                !arg.get_default_values().is_empty() || help.contains("[default:"),
                "{} --{id} has no documented default",
                sub.get_name()
            );
            assert!(!help.is_empty(), "{} --{id} has no help text", sub.get_name());
        }
    }
    let out = Command::new(BIN).args(["experiment", "--help"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["--nu <NU>", "[default: 2]", "[default: optimize]", "[default: 1000]", "--config"] {
        assert!(text.contains(needle), "missing {needle:?} in\n{text}");
    }
}

#[test]
fn exit_codes_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let code = |args: &[&str]| run(args, &out).status.code().unwrap();
    assert_eq!(Command::new(BIN).arg("fit").output().unwrap().status.code(), Some(exit::USAGE));
    assert_eq!(code(&["simulate", "--a", "1.2"]), exit::VALIDATION);
    assert_eq!(code(&["simulate", "--p", "2", "--a", "0.5"]), exit::VALIDATION);
    assert_eq!(code(&["hankel", "--input", "/nonexistent/trajectory.csv"]), exit::VALIDATION);
    assert_eq!(code(&["mc-width", "--t", "9", "--r", "1", "--replicates", "10"]), exit::SCALE_GUARD);
    assert_eq!(code(&["mc-sigmah", "--t", "10", "--T", "60", "--replicates", "10"]), exit::SCALE_GUARD);
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"").unwrap();
    assert_eq!(run(&["simulate"], &blocker.join("sub")).status.code(), Some(exit::IO));
}

#[test]
fn seed_precedence_flag_env_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, br#"{"seed": 1, "T": 50}"#).unwrap();
    let seed_of = |extra: &[&str], env: Option<&str>, name: &str| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(BIN);
        cmd.args(["simulate", "--config", cfg.to_str().unwrap()])
            .args(extra)
            .arg("--out")
            .arg(&out)
            .env_remove(SEED_ENV);
        if let Some(v) = env {
            cmd.env(SEED_ENV, v);
        }
        assert!(cmd.output().unwrap().status.success());
        let c = json(&out.join("config.json"));
        assert_eq!(c["T"], 50);
        c["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(&[], None, "file"), 1);
    assert_eq!(seed_of(&[], Some("2"), "env"), 2);
    assert_eq!(seed_of(&["--seed", "3"], Some("2"), "flag"), 3);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, br#"{"horizon": 50}"#).unwrap();
    let res = run(&["simulate", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(res.status.code(), Some(exit::VALIDATION));
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let res = run(
        &[
            "experiment",
            "--t",
            "4",
            "--T",
            "300",
            "--replicates",
            "5",
            "--calibration-replicates",
            "10",
            "--seed",
            "11",
        ],
        &first,
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest = json(&first.join("manifest.json"));
    let config_bytes = fs::read(first.join("config.json")).unwrap();
    assert_eq!(manifest["config_sha256"], hex::encode(Sha256::digest(&config_bytes)));
    assert_eq!(manifest["seed"], 11);
    assert!(manifest["created_unix"].as_u64().is_some());

    let cfg = dir.path().join("replay.json");
    fs::write(&cfg, serde_json::to_vec(&manifest["config"]).unwrap()).unwrap();
    let second = dir.path().join("second");
    let res = run(&[manifest["command"].as_str().unwrap(), "--config", cfg.to_str().unwrap()], &second);
    assert!(res.status.success());
    for name in ["experiment.csv", "summary.json", "config.json"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
}
