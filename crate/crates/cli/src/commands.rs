use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use systemic_risk::config::ExperimentConfig;
use systemic_risk::nn::Mlp;
use systemic_risk::primal::PrimalSummary;
use systemic_risk::dual::DualSummary;
use systemic_risk::scenario::{self, DistributionSpec, ScenarioSet};
use systemic_risk::utility::{Utility, UtilitySpec};
use systemic_risk::{analytic, dual, eval, primal, Error, Result};

pub const TRAIN_CSV: &str = "scenarios_train.csv";
pub const TEST_CSV: &str = "scenarios_test.csv";
const SCENARIO_SPECS: &str = "scenarios.json";
const N_BINS: usize = 100;

#[derive(Serialize, Deserialize, PartialEq)]
struct ScenarioSpecs {
    train: DistributionSpec,
    test: DistributionSpec,
}

#[derive(Serialize, Deserialize)]
struct PrimalRecord {
    lambda_effective: f64,
    train: PrimalSummary,
    test: PrimalTest,
}

#[derive(Serialize, Deserialize)]
struct PrimalTest {
    rho_hat: f64,
    variance_of_sum: f64,
    acceptance_slack: f64,
}

#[derive(Serialize, Deserialize)]
struct DualRecord {
    lambda_effective: f64,
    train: DualSummary,
    test: DualTest,
}

#[derive(Serialize, Deserialize)]
struct DualTest {
    rho_hat: f64,
    alpha_hat: f64,
    penalty_residual: f64,
    acceptance_slack: f64,
}

#[derive(Serialize)]
struct OracleRecord<'a> {
    sample: &'a str,
    n_samples: usize,
    rho: f64,
    penalty_at_optimum: f64,
    fair_allocations: &'a [f64],
    relative_entropy: f64,
    constants: &'a analytic::PairedExpConstants,
}

#[derive(Serialize)]
struct ReportRecord<'a> {
    experiment: &'a str,
    sample: &'a str,
    n_samples: usize,
    metrics: eval::MetricsReport,
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| missing(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn missing(path: &Path, err: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(err.kind(), format!("missing artifact {}: {err}", path.display())))
}

/// Writes numeric columns with a header, one row per sample.
fn write_columns(path: &Path, names: &[&str], columns: &[&[f64]]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", names.join(","))?;
    let rows = columns.first().map_or(0, |c| c.len());
    for i in 0..rows {
        let cells: Vec<String> = columns.iter().map(|c| format!("{:.16e}", c[i])).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn write_history(path: &Path, history: &[f64]) -> Result<()> {
    let epochs: Vec<f64> = (0..history.len()).map(|e| e as f64).collect();
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "epoch,loss")?;
    for (e, l) in epochs.iter().zip(history) {
        writeln!(w, "{e},{l:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

fn prepare(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    let mut resolved = cfg.clone();
    resolved.output_dir = PathBuf::from(".");
    resolved.save(out_path(cfg, "config.toml"))
}

/// Training and test scenarios, reusing the CSVs in the output directory when
/// they were drawn from the same specification.
fn scenarios(cfg: &ExperimentConfig, verbose: bool) -> Result<(ScenarioSet, ScenarioSet)> {
    let specs = ScenarioSpecs { train: cfg.scenario.clone(), test: cfg.test_spec() };
    let (train_path, test_path, spec_path) = (out_path(cfg, TRAIN_CSV), out_path(cfg, TEST_CSV), out_path(cfg, SCENARIO_SPECS));
    let n = cfg.scenario.n_agents;
    if train_path.exists() && test_path.exists() {
        if let Ok(stored) = read_json::<ScenarioSpecs>(&spec_path) {
            if stored == specs {
                return Ok((ScenarioSet::load_csv(&train_path, Some(n))?, ScenarioSet::load_csv(&test_path, Some(n))?));
            }
        }
    }
    if verbose {
        eprintln!("drawing {} training and {} test scenarios", specs.train.n_samples, specs.test.n_samples);
    }
    let train = scenario::generate(&specs.train)?;
    let test = scenario::generate(&specs.test)?;
    train.save_csv(&train_path)?;
    test.save_csv(&test_path)?;
    write_json(&spec_path, &specs)?;
    Ok((train, test))
}

fn paired_alpha(cfg: &ExperimentConfig) -> Result<&[f64]> {
    match &cfg.utility {
        UtilitySpec::PairedExponential { alpha } => Ok(alpha),
        _ => Err(Error::Config { field: "utility".into(), msg: "the closed-form reference needs a paired exponential utility".into() }),
    }
}

pub fn print_config(cfg: &ExperimentConfig, _verbose: bool) -> Result<()> {
    print!("{}", cfg.to_toml_string()?);
    Ok(())
}

pub fn generate(cfg: &ExperimentConfig, verbose: bool) -> Result<()> {
    prepare(cfg)?;
    let (train, test) = scenarios(cfg, verbose)?;
    if verbose {
        eprintln!("wrote {} and {} ({} agents) to {}", TRAIN_CSV, TEST_CSV, train.n_agents(), cfg.output_dir.display());
        eprintln!("mean aggregate loss: train {:.6}, test {:.6}", mean(train.sums().as_slice().unwrap()), mean(test.sums().as_slice().unwrap()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn oracle(cfg: &ExperimentConfig, verbose: bool) -> Result<()> {
    let alpha = paired_alpha(cfg)?;
    prepare(cfg)?;
    let (_, test) = scenarios(cfg, verbose)?;
    let sol = analytic::solve(alpha, cfg.level(), &test)?;
    let record = OracleRecord {
        sample: "test",
        n_samples: test.n_samples(),
        rho: sol.rho,
        penalty_at_optimum: sol.penalty_at_optimum,
        fair_allocations: &sol.fair_allocations,
        relative_entropy: sol.relative_entropy,
        constants: &sol.constants,
    };
    write_json(&out_path(cfg, "oracle.json"), &record)?;
    let s = test.sums();
    write_columns(&out_path(cfg, "oracle_rn.csv"), &["s", "rn"], &[s.as_slice().unwrap(), sol.rn_derivative.as_slice().unwrap()])?;
    if verbose {
        eprintln!("rho = {:.6}, penalty = {:.6}", sol.rho, sol.penalty_at_optimum);
    }
    Ok(())
}

fn progress(verbose: bool, label: &'static str, total: usize) -> impl FnMut(usize, f64) {
    let every = (total / 20).max(1);
    move |epoch, loss| {
        if verbose && (epoch % every == 0 || epoch + 1 == total) {
            eprintln!("{label} epoch {epoch:>4}/{total}: loss {loss:.6}");
        }
    }
}

pub fn primal(cfg: &ExperimentConfig, verbose: bool) -> Result<()> {
    prepare(cfg)?;
    let (train, test) = scenarios(cfg, verbose)?;
    let p = &cfg.primal;
    let sol = primal::train_with_observer(&cfg.utility, &train, p, progress(verbose, "primal", p.epochs + p.polish_epochs))?;
    let on_test = sol.evaluate(&cfg.utility, &test, p)?;
    fs::write(out_path(cfg, "primal_network.json"), sol.network.to_json()?)?;
    let record = PrimalRecord {
        lambda_effective: sol.lambda_effective,
        train: sol.summary(p),
        test: PrimalTest { rho_hat: on_test.rho_hat, variance_of_sum: on_test.variance_of_sum, acceptance_slack: on_test.acceptance_slack },
    };
    write_json(&out_path(cfg, "primal.json"), &record)?;
    write_history(&out_path(cfg, "primal_loss.csv"), &sol.loss_history)?;
    if verbose {
        eprintln!("rho_hat: train {:.6}, test {:.6}", sol.rho_hat, on_test.rho_hat);
    }
    Ok(())
}

pub fn dual(cfg: &ExperimentConfig, verbose: bool) -> Result<()> {
    prepare(cfg)?;
    let (train, test) = scenarios(cfg, verbose)?;
    let d = &cfg.dual;
    let sol = dual::train_with_observer(&cfg.utility, &train, d, progress(verbose, "dual", d.epochs + d.polish_epochs))?;
    let on_test = sol.evaluate(&cfg.utility, &test, d)?;
    fs::write(out_path(cfg, "dual_psi.json"), sol.psi.to_json()?)?;
    fs::write(out_path(cfg, "dual_theta.json"), sol.theta.to_json()?)?;
    let record = DualRecord {
        lambda_effective: sol.lambda_effective,
        train: sol.summary(),
        test: DualTest {
            rho_hat: on_test.rho_hat,
            alpha_hat: on_test.alpha_hat,
            penalty_residual: on_test.penalty_residual,
            acceptance_slack: on_test.acceptance_slack,
        },
    };
    write_json(&out_path(cfg, "dual.json"), &record)?;
    write_history(&out_path(cfg, "dual_loss.csv"), &sol.loss_history)?;
    let s = test.sums();
    write_columns(&out_path(cfg, "dual_rn.csv"), &["s", "theta"], &[s.as_slice().unwrap(), on_test.rn_samples.as_slice().unwrap()])?;
    if verbose {
        if let Some(w) = &sol.oscillation_warning {
            eprintln!("warning: {w}");
        }
        eprintln!("rho_hat {:.6}, alpha_hat {:.6} (test)", on_test.rho_hat, on_test.alpha_hat);
    }
    Ok(())
}

fn load_network(path: &Path, utility: &dyn Utility) -> Result<Mlp> {
    let net = Mlp::from_json(&fs::read_to_string(path).map_err(|e| missing(path, e))?)?;
    if net.n_inputs() != utility.n_agents() {
        return Err(Error::DimensionMismatch { expected: utility.n_agents(), got: net.n_inputs() });
    }
    Ok(net)
}

pub fn report(cfg: &ExperimentConfig, verbose: bool) -> Result<()> {
    let test_path = out_path(cfg, TEST_CSV);
    if !test_path.exists() {
        return Err(missing(&test_path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    prepare(cfg)?;
    let (_, test) = scenarios(cfg, false)?;
    let u = &cfg.utility;
    let level = cfg.level();

    let reference = if cfg.run_oracle { Some(analytic::solve(paired_alpha(cfg)?, level, &test)?) } else { None };

    let primal_sol = if out_path(cfg, "primal.json").exists() {
        let record: PrimalRecord = read_json(&out_path(cfg, "primal.json"))?;
        let net = load_network(&out_path(cfg, "primal_network.json"), u)?;
        Some(primal::evaluate_network(u, &net, &test, cfg.primal.mu, record.lambda_effective, level)?)
    } else {
        None
    };
    let dual_sol = if out_path(cfg, "dual.json").exists() {
        let record: DualRecord = read_json(&out_path(cfg, "dual.json"))?;
        let psi = load_network(&out_path(cfg, "dual_psi.json"), u)?;
        let theta = load_network(&out_path(cfg, "dual_theta.json"), u)?;
        Some(dual::evaluate_network(u, &psi, &theta, &test, record.lambda_effective, level)?)
    } else {
        None
    };
    if reference.is_none() && primal_sol.is_none() && dual_sol.is_none() {
        return Err(missing(&out_path(cfg, "primal.json"), std::io::Error::other("run `oracle`, `primal` or `dual` first")));
    }

    let s = test.sums();
    let s = s.as_slice().unwrap();
    let inputs = eval::ReportInputs {
        s_values: Some(s),
        primal: primal_sol.as_ref().map(|p| (&p.y_samples, p.rho_hat, p.variance_of_sum, p.acceptance_slack)),
        dual: dual_sol.as_ref().map(|d| (d.rn_samples.as_slice().unwrap(), d.rho_hat, d.alpha_hat)),
        reference: reference.as_ref(),
    };
    let n_bins = N_BINS.min(test.n_samples()).max(2);
    let metrics = eval::build_report(&inputs, n_bins)?;
    write_json(
        &out_path(cfg, "report.json"),
        &ReportRecord { experiment: &cfg.name, sample: "test", n_samples: test.n_samples(), metrics: metrics.clone() },
    )?;

    let mut names = vec!["s"];
    let mut columns: Vec<&[f64]> = vec![s];
    if let Some(d) = &dual_sol {
        names.push("rn_dual");
        columns.push(d.rn_samples.as_slice().unwrap());
    }
    if let Some(r) = &reference {
        names.push("rn_oracle");
        columns.push(r.rn_derivative.as_slice().unwrap());
    }
    if columns.len() > 1 {
        write_columns(&out_path(cfg, "plot_rn.csv"), &names, &columns)?;
        let binned: Vec<Vec<(f64, f64)>> = columns[1..].iter().map(|c| eval::binned_means(c, s, n_bins)).collect::<Result<_>>()?;
        let mut bin_cols: Vec<Vec<f64>> = vec![binned[0].iter().map(|b| b.0).collect()];
        bin_cols.extend(binned.iter().map(|b| b.iter().map(|p| p.1).collect()));
        let refs: Vec<&[f64]> = bin_cols.iter().map(|c| c.as_slice()).collect();
        write_columns(&out_path(cfg, "plot_rn_binned.csv"), &names, &refs)?;
    }
    if verbose {
        eprintln!("{}", serde_json::to_string_pretty(&metrics)?);
    }
    Ok(())
}
