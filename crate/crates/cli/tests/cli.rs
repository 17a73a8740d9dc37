use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use systemic_risk::config::ExperimentConfig;
use systemic_risk::nn::{BatchSize, NetworkConfig};

fn srm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srm")).args(args).output().expect("srm runs")
}

fn run_ok(args: &[&str]) {
    let out = srm(args);
    assert!(out.status.success(), "srm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn small_net() -> NetworkConfig {
    NetworkConfig { hidden_layers: vec![8, 8], ..NetworkConfig::default() }
}

/// A fast paired-exponential experiment: a few epochs on a few hundred scenarios.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig::paired_gaussian();
    cfg.scenario.n_samples = 400;
    cfg.test_samples = 300;
    cfg.primal.epochs = 4;
    cfg.primal.polish_epochs = 2;
    cfg.primal.batch_size = BatchSize::Rows(100);
    cfg.primal.network = small_net();
    cfg.dual.epochs = 4;
    cfg.dual.polish_epochs = 2;
    cfg.dual.batch_size = BatchSize::Rows(100);
    cfg.dual.psi_network = small_net();
    cfg.dual.theta_network = small_net();
    let path = dir.join("small.toml");
    cfg.save(&path).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn trivial_oracle_report_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["generate", "--preset", "trivial", "--out", out, "-q"]);
    run_ok(&["oracle", "--preset", "trivial", "--out", out, "-q"]);
    run_ok(&["report", "--preset", "trivial", "--out", out, "-q"]);
    let report = json(&dir.path().join("report.json"));
    assert!(report["metrics"]["rho_ref"].as_f64().unwrap().abs() <= 1e-12);
    assert!(report["metrics"]["alpha_ref"].as_f64().unwrap().abs() <= 1e-12);
    assert!(dir.path().join("plot_rn.csv").exists());
}

#[test]
fn full_pipeline_reports_oracle_comparisons() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (cfg, out) = (cfg.to_str().unwrap(), dir.path().join("run"));
    let out = out.to_str().unwrap();
    for cmd in ["generate", "oracle", "primal", "dual", "report"] {
        run_ok(&[cmd, "--config", cfg, "--out", out, "-q"]);
    }
    let metrics = &json(&Path::new(out).join("report.json"))["metrics"];
    for key in ["abs_diff_rho", "abs_diff_alpha", "ord_rn", "ord_allocations", "duality_gap", "sigma_s_score", "full_allocation_residual"] {
        assert!(metrics[key].is_number(), "{key} missing from report");
    }
    assert!(metrics["fair_allocations_ref"].as_array().unwrap().len() == 10);
    let header = fs::read_to_string(Path::new(out).join("plot_rn.csv")).unwrap();
    assert!(header.starts_with("s,rn_dual,rn_oracle\n"));
    let scenarios = fs::read_to_string(Path::new(out).join("scenarios_train.csv")).unwrap();
    assert!(scenarios.starts_with("agent_1,agent_2,"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let mut payloads = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let out = out.to_str().unwrap();
        for cmd in ["generate", "primal", "dual", "report"] {
            run_ok(&[cmd, "--config", cfg, "--out", out, "--seed", "7", "-q"]);
        }
        let files: Vec<Vec<u8>> = ["primal.json", "dual.json", "report.json", "primal_network.json", "dual_rn.csv", "scenarios_test.csv"]
            .iter()
            .map(|f| fs::read(Path::new(out).join(f)).unwrap())
            .collect();
        payloads.push(files);
    }
    assert_eq!(payloads[0], payloads[1]);
}

#[test]
fn aggregate_utility_report_has_no_oracle_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::exp_aggregate();
    cfg.scenario.n_samples = 300;
    cfg.test_samples = 300;
    cfg.primal.epochs = 2;
    cfg.primal.polish_epochs = 1;
    cfg.primal.network = small_net();
    cfg.dual.epochs = 2;
    cfg.dual.polish_epochs = 1;
    cfg.dual.psi_network = small_net();
    cfg.dual.theta_network = small_net();
    let path = dir.path().join("agg.toml");
    cfg.save(&path).unwrap();
    let out = dir.path().join("run");
    for cmd in ["primal", "dual", "report"] {
        run_ok(&[cmd, "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "-q"]);
    }
    let metrics = &json(&out.join("report.json"))["metrics"];
    assert!(metrics["rho_primal"].is_number());
    assert!(metrics["full_allocation_residual"].is_number());
    assert!(metrics["sigma_s_score"].is_number());
    assert!(metrics["fair_allocations_est"].is_array());
    assert!(metrics["abs_diff_rho"].is_null() && metrics["ord_rn"].is_null());
    let oracle = srm(&["oracle", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(oracle.status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_code_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::trivial();
    cfg.dual.level = -1.0;
    let path = dir.path().join("bad.toml");
    fs::write(&path, toml_of(&cfg)).unwrap();
    let out = srm(&["generate", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dual.B"));

    let mut cfg = ExperimentConfig::trivial();
    cfg.primal.lr = -1.0;
    fs::write(&path, toml_of(&cfg)).unwrap();
    let out = srm(&["primal", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("primal.lr"));

    let out = srm(&["generate", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

fn toml_of(cfg: &ExperimentConfig) -> String {
    // `to_toml_string` does not validate, so invalid configs can be written.
    cfg.to_toml_string().unwrap()
}

#[test]
fn divergence_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::paired_gaussian();
    cfg.scenario.n_samples = 200;
    cfg.test_samples = 200;
    cfg.primal.lr = 1e6;
    cfg.primal.warm_start = false;
    cfg.primal.network = small_net();
    let path = dir.path().join("diverge.toml");
    cfg.save(&path).unwrap();
    let out = srm(&["primal", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn report_without_artifacts_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = srm(&["report", "--preset", "trivial", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenarios_test.csv"));
}

#[test]
fn shipped_configs_match_presets() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ExperimentConfig::PRESETS {
        let file = ExperimentConfig::load(dir.join(format!("{name}.toml"))).unwrap();
        let mut preset = ExperimentConfig::preset(name).unwrap();
        preset.output_dir = file.output_dir.clone();
        assert_eq!(file, preset, "{name}.toml is out of date");
    }
}

#[test]
fn printed_config_round_trips() {
    let out = srm(&["config", "--preset", "paired_beta", "--seed", "3"]);
    assert!(out.status.success());
    let cfg = ExperimentConfig::from_toml_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::paired_beta().with_seed(3));
}
