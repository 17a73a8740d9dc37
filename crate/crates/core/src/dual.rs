//! Adversarial solver for the dual problem. A network `Ψ` proposes acceptable
//! positions `Z = Ψ(X)` and a network `Θ` with a unit-mean softplus head
//! proposes the density `dQ/dP`:
//!
//! `J_α = Σ_n mean(−Ψ_n Θ) − λ_α·(B − mean U(Ψ))⁺`,
//! `J_dual = mean(−S·Θ) − J_α`.
//!
//! `Ψ` descends `J_dual` (so it ascends `J_α`) and `Θ` ascends `J_dual`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{epoch_batches, BatchSize, ChaCha8Rng, Direction, Mlp, NetworkConfig, OutputHead};
use crate::primal::{
    binding_uniform_shift, check_level, decayed_lr, effective_hinge_weight, non_negative, positive, unit_interval, warmup_factor, HingeScale, HingeState,
};
use crate::scenario::ScenarioSet;
use crate::stats;
use crate::utility::Utility;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualConfig {
    pub lambda_alpha: f64,
    pub hinge_scale: HingeScale,
    /// See `PrimalConfig::hinge_smoothing`.
    pub hinge_smoothing: f64,
    #[serde(rename = "B")]
    pub level: f64,
    pub lr_psi: f64,
    pub lr_theta: f64,
    pub lr_final_fraction: f64,
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub polish_epochs: usize,
    pub polish_lr_fraction: f64,
    pub seed: u64,
    pub warm_start: bool,
    pub psi_network: NetworkConfig,
    pub theta_network: NetworkConfig,
    /// Trailing window (epochs) and loss swing that trigger an oscillation warning.
    pub oscillation_window: usize,
    pub oscillation_bound: f64,
    /// Number of final epochs whose parameter iterates are averaged into the
    /// returned networks; 0 keeps the last iterate.
    pub average_epochs: usize,
    /// `Ψ` updates per batch; all but the last see a frozen `Θ`.
    pub psi_steps: usize,
    /// Epochs over which the step size ramps up linearly from zero.
    pub warmup_epochs: usize,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            lambda_alpha: 10.0,
            hinge_scale: HingeScale::Multiplier,
            hinge_smoothing: 0.01,
            level: -5.0,
            lr_psi: 5e-3,
            lr_theta: 2e-3,
            lr_final_fraction: 0.01,
            epochs: 200,
            batch_size: BatchSize::Rows(250),
            polish_epochs: 50,
            polish_lr_fraction: 0.1,
            seed: 0,
            warm_start: true,
            psi_network: NetworkConfig::default(),
            // A zero output layer starts Θ at the uniform density.
            theta_network: NetworkConfig { output_init_scale: 0.0, ..NetworkConfig::default() },
            oscillation_window: 20,
            oscillation_bound: 1.0,
            average_epochs: 0,
            psi_steps: 5,
            warmup_epochs: 1,
        }
    }
}

impl DualConfig {
    pub fn validate(&self, utility: &dyn Utility) -> Result<()> {
        non_negative("dual.lambda_alpha", self.lambda_alpha)?;
        positive("dual.lr_psi", self.lr_psi)?;
        positive("dual.lr_theta", self.lr_theta)?;
        positive("dual.lr_final_fraction", self.lr_final_fraction)?;
        positive("dual.polish_lr_fraction", self.polish_lr_fraction)?;
        positive("dual.oscillation_bound", self.oscillation_bound)?;
        unit_interval("dual.hinge_smoothing", self.hinge_smoothing)?;
        if self.epochs == 0 {
            return Err(Error::config("dual.epochs", "must be at least 1"));
        }
        if self.batch_size == BatchSize::Rows(0) {
            return Err(Error::config("dual.batch_size", "must be at least 1"));
        }
        if self.average_epochs > self.epochs + self.polish_epochs {
            return Err(Error::config("dual.average_epochs", "exceeds the total number of epochs"));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::config("dual.warmup_epochs", "exceeds dual.epochs"));
        }
        if self.psi_steps == 0 {
            return Err(Error::config("dual.psi_steps", "must be at least 1"));
        }
        if self.oscillation_window < 2 {
            return Err(Error::config("dual.oscillation_window", "must be at least 2"));
        }
        self.psi_network.validate("dual.psi_network")?;
        self.theta_network.validate("dual.theta_network")?;
        check_level(utility, self.level)
    }

    /// Learning-rate multiplier and batch size for `epoch`.
    fn schedule(&self, epoch: usize) -> (f64, Option<usize>) {
        if epoch < self.epochs {
            (decayed_lr(1.0, self.lr_final_fraction, epoch, self.epochs), self.batch_size.rows())
        } else {
            (decayed_lr(self.polish_lr_fraction, self.lr_final_fraction, epoch - self.epochs, self.polish_epochs), None)
        }
    }
}

/// Objective values and upstream gradients of one dual evaluation.
#[derive(Clone, Debug)]
pub struct DualLoss {
    pub j_alpha: f64,
    pub j_dual: f64,
    /// `B − mean U(Ψ)`.
    pub acceptance_slack: f64,
    /// `∂J_dual/∂Ψ`.
    pub psi_upstream: Array2<f64>,
    /// `∂J_dual/∂Θ`.
    pub theta_upstream: Array2<f64>,
}

/// Evaluates `J_α` and `J_dual` for positions `z`, density `theta` (one
/// column) and aggregate losses `sums`.
pub fn loss_alpha(
    utility: &dyn Utility,
    z: ArrayView2<f64>,
    theta: ArrayView2<f64>,
    sums: ArrayView1<f64>,
    lambda_alpha: f64,
    level: f64,
) -> Result<DualLoss> {
    loss_alpha_with(utility, z, theta, sums, lambda_alpha, level, &mut HingeState::per_batch())
}

/// As [`loss_alpha`], with the hinge indicator taken from `hinge`.
pub fn loss_alpha_with(
    utility: &dyn Utility,
    z: ArrayView2<f64>,
    theta: ArrayView2<f64>,
    sums: ArrayView1<f64>,
    lambda_alpha: f64,
    level: f64,
    hinge: &mut HingeState,
) -> Result<DualLoss> {
    let (m, n) = z.dim();
    if theta.dim() != (m, 1) || sums.len() != m {
        return Err(Error::Shape(format!("positions {:?}, density {:?}, sums {}", z.dim(), theta.dim(), sums.len())));
    }
    if n != utility.n_agents() {
        return Err(Error::DimensionMismatch { expected: utility.n_agents(), got: n });
    }
    if m == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let row_sums: Vec<f64> = z.sum_axis(Axis(1)).to_vec();
    let d: Vec<f64> = theta.column(0).to_vec();
    let s: Vec<f64> = sums.to_vec();
    let weighted = stats::mean_product(&row_sums, &d);
    let mut utilities = Vec::with_capacity(m);
    let mut zr = vec![0.0; n];
    for row in z.rows() {
        zr.iter_mut().zip(row).for_each(|(a, b)| *a = *b);
        utilities.push(utility.value(&zr));
    }
    let acceptance_slack = level - stats::mean(&utilities);
    let active = hinge.decide(acceptance_slack);
    let j_alpha = -weighted - lambda_alpha * acceptance_slack.max(0.0);
    let j_dual = -stats::mean_product(&s, &d) - j_alpha;

    let inv_m = 1.0 / m as f64;
    let mut psi_upstream = Array2::zeros((m, n));
    let mut grad = vec![0.0; n];
    for (i, mut row) in psi_upstream.rows_mut().into_iter().enumerate() {
        if active {
            zr.iter_mut().zip(z.row(i)).for_each(|(a, b)| *a = *b);
            utility.gradient(&zr, &mut grad);
            for j in 0..n {
                row[j] = (d[i] - lambda_alpha * grad[j]) * inv_m;
            }
        } else {
            row.fill(d[i] * inv_m);
        }
    }
    let theta_upstream = Array2::from_shape_fn((m, 1), |(i, _)| (row_sums[i] - s[i]) * inv_m);
    Ok(DualLoss { j_alpha, j_dual, acceptance_slack, psi_upstream, theta_upstream })
}

#[derive(Clone, Debug)]
pub struct DualSolution {
    pub rho_hat: f64,
    pub alpha_hat: f64,
    pub rn_samples: Array1<f64>,
    pub z_samples: Array2<f64>,
    /// `λ_α·(B − mean U(Z))⁺` contained in `alpha_hat`.
    pub penalty_residual: f64,
    pub acceptance_slack: f64,
    pub loss_history: Vec<f64>,
    pub lambda_effective: f64,
    pub oscillation_warning: Option<String>,
    pub psi: Mlp,
    pub theta: Mlp,
}

/// JSON-friendly part of a [`DualSolution`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSummary {
    pub rho_hat: f64,
    pub alpha_hat: f64,
    pub penalty_residual: f64,
    pub acceptance_slack: f64,
    pub lambda_effective: f64,
    pub oscillation_warning: Option<String>,
    pub loss_history: Vec<f64>,
}

impl DualSolution {
    pub fn summary(&self) -> DualSummary {
        DualSummary {
            rho_hat: self.rho_hat,
            alpha_hat: self.alpha_hat,
            penalty_residual: self.penalty_residual,
            acceptance_slack: self.acceptance_slack,
            lambda_effective: self.lambda_effective,
            oscillation_warning: self.oscillation_warning.clone(),
            loss_history: self.loss_history.clone(),
        }
    }

    /// Re-evaluates the trained networks on another sample.
    pub fn evaluate(&self, utility: &dyn Utility, scenarios: &ScenarioSet, cfg: &DualConfig) -> Result<DualSolution> {
        let mut out = evaluate_network(utility, &self.psi, &self.theta, scenarios, self.lambda_effective, cfg.level)?;
        out.loss_history = self.loss_history.clone();
        out.oscillation_warning = self.oscillation_warning.clone();
        Ok(out)
    }
}

/// Evaluates trained networks on `scenarios` with hinge weight `lambda`.
pub fn evaluate_network(utility: &dyn Utility, psi: &Mlp, theta: &Mlp, scenarios: &ScenarioSet, lambda: f64, level: f64) -> Result<DualSolution> {
    let x = scenarios.data().view();
    let z = psi.forward(x)?;
    let d = theta.forward(x)?;
    let loss = loss_alpha(utility, z.view(), d.view(), scenarios.sums().view(), lambda, level)?;
    Ok(DualSolution {
        rho_hat: loss.j_dual,
        alpha_hat: loss.j_alpha,
        rn_samples: d.column(0).to_owned(),
        z_samples: z,
        penalty_residual: lambda * loss.acceptance_slack.max(0.0),
        acceptance_slack: loss.acceptance_slack,
        loss_history: Vec::new(),
        lambda_effective: lambda,
        oscillation_warning: None,
        psi: psi.clone(),
        theta: theta.clone(),
    })
}

/// Largest swing `max − min` of the last `window` entries, if available.
pub fn trailing_swing(history: &[f64], window: usize) -> Option<f64> {
    if history.len() < window || window == 0 {
        return None;
    }
    let tail = &history[history.len() - window..];
    let max = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(max - min)
}

pub fn train(utility: &dyn Utility, scenarios: &ScenarioSet, cfg: &DualConfig) -> Result<DualSolution> {
    train_with_observer(utility, scenarios, cfg, |_, _| {})
}

/// As [`train`], calling `observe(epoch, J_dual)` after every epoch.
pub fn train_with_observer(
    utility: &dyn Utility,
    scenarios: &ScenarioSet,
    cfg: &DualConfig,
    mut observe: impl FnMut(usize, f64),
) -> Result<DualSolution> {
    cfg.validate(utility)?;
    let n = utility.n_agents();
    if scenarios.n_agents() != n {
        return Err(Error::DimensionMismatch { expected: n, got: scenarios.n_agents() });
    }
    let x = scenarios.data().view();
    let m_total = scenarios.n_samples();
    let mut psi = cfg.psi_network.build(x, n, OutputHead::Identity, cfg.seed)?;
    let mut theta = cfg.theta_network.build(x, 1, OutputHead::SoftplusUnitMean, cfg.seed.wrapping_add(1))?;
    // Under the uniform measure the best acceptable position is a constant.
    let origin = Array2::zeros((1, n));
    let z0 = binding_uniform_shift(utility, origin.view(), cfg.level)?;
    if cfg.warm_start {
        psi.set_output_bias(&vec![z0; n])?;
    }
    let lambda = effective_hinge_weight(utility, origin.view(), z0, cfg.lambda_alpha, cfg.hinge_scale);

    let sums = scenarios.sums();
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let total = cfg.epochs + cfg.polish_epochs;
    let mut history = Vec::with_capacity(total);
    let mut warning = None;
    let mut smoothed = HingeState::new(cfg.hinge_smoothing);
    let mut exact = HingeState::per_batch();
    let average_from = total - cfg.average_epochs;
    let mut averaged: Option<(Mlp, Mlp, usize)> = None;
    for epoch in 0..total {
        let (scale, batch_size) = cfg.schedule(epoch);
        let batches = epoch_batches(m_total, batch_size, &mut shuffle);
        let mut epoch_loss = 0.0;
        for (b, rows) in batches.iter().enumerate() {
            let scale = scale * warmup_factor(epoch, b, batches.len(), cfg.warmup_epochs);
            let (xb, sb) = if rows.len() == m_total {
                (x.to_owned(), sums.to_owned())
            } else {
                (x.select(Axis(0), rows), sums.select(Axis(0), rows))
            };
            let theta_tape = theta.forward_with_tape(xb.view())?;
            let hinge = if batch_size.is_some() { &mut smoothed } else { &mut exact };
            for _ in 1..cfg.psi_steps {
                let psi_tape = psi.forward_with_tape(xb.view())?;
                let loss = loss_alpha_with(utility, psi_tape.output().view(), theta_tape.output().view(), sb.view(), lambda, cfg.level, hinge)?;
                let psi_grads = psi.backward(&psi_tape, loss.psi_upstream.view())?;
                psi.sgd_step(&psi_grads, cfg.lr_psi * scale, Direction::Descent)?;
            }
            let psi_tape = psi.forward_with_tape(xb.view())?;
            let loss = loss_alpha_with(utility, psi_tape.output().view(), theta_tape.output().view(), sb.view(), lambda, cfg.level, hinge)?;
            if !loss.j_dual.is_finite() {
                return Err(Error::Divergence { epoch, detail: format!("dual loss is {}", loss.j_dual) });
            }
            let psi_grads = psi.backward(&psi_tape, loss.psi_upstream.view())?;
            let theta_grads = theta.backward(&theta_tape, loss.theta_upstream.view())?;
            psi.sgd_step(&psi_grads, cfg.lr_psi * scale, Direction::Descent)?;
            theta.sgd_step(&theta_grads, cfg.lr_theta * scale, Direction::Ascent)?;
            if epoch >= average_from {
                match averaged.as_mut() {
                    None => averaged = Some((psi.clone(), theta.clone(), 1)),
                    Some((avg_psi, avg_theta, k)) => {
                        *k += 1;
                        avg_psi.blend_toward(&psi, 1.0 / *k as f64)?;
                        avg_theta.blend_toward(&theta, 1.0 / *k as f64)?;
                    }
                }
            }
            epoch_loss += loss.j_dual * rows.len() as f64;
        }
        if !psi.is_finite() || !theta.is_finite() {
            return Err(Error::Divergence { epoch, detail: "non-finite network parameters".into() });
        }
        let epoch_loss = epoch_loss / m_total as f64;
        history.push(epoch_loss);
        observe(epoch, epoch_loss);
        // The first quarter is transient; large swings there are expected.
        if warning.is_none() && epoch >= total / 4 {
            if let Some(swing) = trailing_swing(&history, cfg.oscillation_window) {
                if swing > cfg.oscillation_bound {
                    warning = Some(format!("J_dual swung by {swing:.4} over {} epochs ending at epoch {epoch}", cfg.oscillation_window));
                }
            }
        }
    }
    if let Some((avg_psi, avg_theta, _)) = averaged {
        psi = avg_psi;
        theta = avg_theta;
    }
    let mut sol = evaluate_network(utility, &psi, &theta, scenarios, lambda, cfg.level)?;
    sol.loss_history = history;
    sol.oscillation_warning = warning;
    Ok(sol)
}
