//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function takes a preset name and a few overrides and returns
//! a JSON string. The same functions are callable from Rust as
//! `Result<String, String>` so they can be tested natively.

use serde::Serialize;
use systemic_risk::config::ExperimentConfig;
use systemic_risk::nn::{BatchSize, NetworkConfig};
use systemic_risk::scenario::{self, ScenarioSet};
use systemic_risk::utility::UtilitySpec;
use systemic_risk::{analytic, eval, primal, stats};
use wasm_bindgen::prelude::*;

const CURVE_BINS: usize = 40;
const MAX_SAMPLES: usize = 200_000;

#[derive(Serialize)]
struct ScenarioSummary {
    n_agents: usize,
    n_samples: usize,
    agent_means: Vec<f64>,
    agent_stdevs: Vec<f64>,
    sum_mean: f64,
    sum_stdev: f64,
    histogram_edges: Vec<f64>,
    histogram_counts: Vec<usize>,
}

#[derive(Serialize)]
struct OracleSummary {
    rho: f64,
    penalty: f64,
    relative_entropy: f64,
    fair_allocations: Vec<f64>,
    /// Bin means of `(S, dQ/dP)` over equal-count bins of `S`.
    curve: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct PrimalSummary {
    rho_hat: f64,
    rho_ref: Option<f64>,
    variance_of_sum: f64,
    acceptance_slack: f64,
    mean_allocations: Vec<f64>,
    loss_history: Vec<f64>,
}

fn experiment(preset: &str, n_samples: usize, seed: u64, level: f64) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::preset(preset).ok_or_else(|| format!("unknown preset `{preset}`; try one of {:?}", ExperimentConfig::PRESETS))?;
    if !(2..=MAX_SAMPLES).contains(&n_samples) {
        return Err(format!("sample count must be between 2 and {MAX_SAMPLES}"));
    }
    cfg = cfg.with_seed(seed);
    cfg.scenario.n_samples = n_samples;
    cfg.test_samples = n_samples;
    cfg.primal.level = level;
    cfg.dual.level = level;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn draw(cfg: &ExperimentConfig) -> Result<ScenarioSet, String> {
    scenario::generate(&cfg.scenario).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

pub fn scenario_summary_json(preset: &str, n_samples: usize, seed: u64, bins: usize) -> Result<String, String> {
    let cfg = experiment(preset, n_samples, seed, ExperimentConfig::preset(preset).map_or(0.0, |c| c.level()))?;
    let set = draw(&cfg)?;
    let columns: Vec<Vec<f64>> = set.data().columns().into_iter().map(|c| c.to_vec()).collect();
    let sums = set.sums().to_vec();
    let bins = bins.clamp(1, 200);
    let lo = sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for s in &sums {
        let b = (((s - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    to_json(&ScenarioSummary {
        n_agents: set.n_agents(),
        n_samples: set.n_samples(),
        agent_means: columns.iter().map(|c| stats::mean(c)).collect(),
        agent_stdevs: columns.iter().map(|c| stats::variance(c).sqrt()).collect(),
        sum_mean: stats::mean(&sums),
        sum_stdev: stats::variance(&sums).sqrt(),
        histogram_edges: (0..=bins).map(|b| lo + b as f64 * width).collect(),
        histogram_counts: counts,
    })
}

pub fn oracle_json(preset: &str, n_samples: usize, seed: u64, level: f64) -> Result<String, String> {
    let cfg = experiment(preset, n_samples, seed, level)?;
    let UtilitySpec::PairedExponential { alpha } = &cfg.utility else {
        return Err(format!("preset `{preset}` has no closed-form solution"));
    };
    let set = draw(&cfg)?;
    let sol = analytic::solve(alpha, level, &set).map_err(|e| e.to_string())?;
    let curve = eval::binned_means(sol.rn_derivative.as_slice().unwrap(), set.sums().as_slice().unwrap(), CURVE_BINS.min(n_samples))
        .map_err(|e| e.to_string())?;
    to_json(&OracleSummary {
        rho: sol.rho,
        penalty: sol.penalty_at_optimum,
        relative_entropy: sol.relative_entropy,
        fair_allocations: sol.fair_allocations,
        curve,
    })
}

pub fn train_primal_json(preset: &str, n_samples: usize, seed: u64, level: f64, epochs: usize) -> Result<String, String> {
    let mut cfg = experiment(preset, n_samples, seed, level)?;
    if epochs == 0 || epochs > 500 {
        return Err("epochs must be between 1 and 500".into());
    }
    cfg.primal.epochs = epochs;
    cfg.primal.polish_epochs = epochs / 2;
    cfg.primal.batch_size = BatchSize::Rows(250);
    cfg.primal.network = NetworkConfig { hidden_layers: vec![32, 32], ..NetworkConfig::default() };
    let set = draw(&cfg)?;
    let sol = primal::train(&cfg.utility, &set, &cfg.primal).map_err(|e| e.to_string())?;
    let rho_ref = match &cfg.utility {
        UtilitySpec::PairedExponential { alpha } => Some(analytic::solve(alpha, level, &set).map_err(|e| e.to_string())?.rho),
        _ => None,
    };
    let mean_allocations = sol.y_samples.columns().into_iter().map(|c| stats::mean(&c.to_vec())).collect();
    to_json(&PrimalSummary {
        rho_hat: sol.rho_hat,
        rho_ref,
        variance_of_sum: sol.variance_of_sum,
        acceptance_slack: sol.acceptance_slack,
        mean_allocations,
        loss_history: sol.loss_history,
    })
}

/// Summary statistics and a histogram of the aggregate loss `S`.
#[wasm_bindgen]
pub fn scenario_summary(preset: &str, n_samples: usize, seed: u64, bins: usize) -> Result<String, JsValue> {
    scenario_summary_json(preset, n_samples, seed, bins).map_err(|e| JsValue::from_str(&e))
}

/// Closed-form risk, penalty, fair allocations and the `(S, dQ/dP)` curve.
#[wasm_bindgen]
pub fn oracle(preset: &str, n_samples: usize, seed: u64, level: f64) -> Result<String, JsValue> {
    oracle_json(preset, n_samples, seed, level).map_err(|e| JsValue::from_str(&e))
}

/// Trains a small allocation network in the page thread.
#[wasm_bindgen]
pub fn train_primal(preset: &str, n_samples: usize, seed: u64, level: f64, epochs: usize) -> Result<String, JsValue> {
    train_primal_json(preset, n_samples, seed, level, epochs).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn presets() -> String {
    ExperimentConfig::PRESETS.join(",")
}
