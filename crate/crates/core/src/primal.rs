//! Neural solver for the primal problem: an allocation network `Y = φ(X)`
//! trained by SGD on
//!
//! `J = mean(ΣY) + μ·Var(ΣY) + λ·(B − mean U(X + Y))⁺`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{epoch_batches, BatchSize, ChaCha8Rng, Direction, Mlp, NetworkConfig, OutputHead};
use crate::scenario::ScenarioSet;
use crate::stats;
use crate::utility::Utility;

/// How a hinge weight in the configuration is turned into the weight used
/// in the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeScale {
    /// The configured value is used as is.
    Absolute,
    /// The configured value multiplies the Lagrange multiplier of the
    /// constraint restricted to uniform cash shifts, `N / E[Σ ∂U_n(X + t)]`,
    /// so the penalty stays exact and equally stiff across utilities.
    Multiplier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrimalConfig {
    pub mu: f64,
    pub lambda_a: f64,
    pub hinge_scale: HingeScale,
    /// Weight of the newest batch in the running slack that switches the
    /// hinge during mini-batch epochs; 1 uses the batch slack alone.
    pub hinge_smoothing: f64,
    #[serde(rename = "B")]
    pub level: f64,
    pub lr: f64,
    /// Learning rate reached at the last epoch, as a fraction of `lr`
    /// (geometric decay; 1 keeps it constant).
    pub lr_final_fraction: f64,
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub seed: u64,
    /// Extra full-batch epochs after the main schedule. Their learning rate
    /// starts at `polish_lr_fraction · lr` and decays by the same final fraction.
    pub polish_epochs: usize,
    pub polish_lr_fraction: f64,
    /// Start the output bias at the uniform cash shift that makes the
    /// constraint bind.
    pub warm_start: bool,
    /// Epochs over which the step size ramps up linearly from zero.
    pub warmup_epochs: usize,
    pub network: NetworkConfig,
}

impl Default for PrimalConfig {
    fn default() -> Self {
        Self {
            mu: 10.0,
            lambda_a: 10.0,
            hinge_scale: HingeScale::Multiplier,
            hinge_smoothing: 0.05,
            level: -5.0,
            lr: 3e-3,
            lr_final_fraction: 0.01,
            epochs: 200,
            batch_size: BatchSize::Rows(250),
            seed: 0,
            polish_epochs: 100,
            polish_lr_fraction: 0.1,
            warm_start: true,
            warmup_epochs: 1,
            network: NetworkConfig::default(),
        }
    }
}

impl PrimalConfig {
    pub fn validate(&self, utility: &dyn Utility) -> Result<()> {
        positive("primal.mu", self.mu)?;
        non_negative("primal.lambda_a", self.lambda_a)?;
        positive("primal.lr", self.lr)?;
        positive("primal.lr_final_fraction", self.lr_final_fraction)?;
        positive("primal.polish_lr_fraction", self.polish_lr_fraction)?;
        unit_interval("primal.hinge_smoothing", self.hinge_smoothing)?;
        if self.epochs == 0 {
            return Err(Error::config("primal.epochs", "must be at least 1"));
        }
        if self.batch_size == BatchSize::Rows(0) {
            return Err(Error::config("primal.batch_size", "must be at least 1"));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::config("primal.warmup_epochs", "exceeds primal.epochs"));
        }
        self.network.validate("primal.network")?;
        check_level(utility, self.level)
    }

    /// Learning rate and batch size for `epoch`, polish epochs included.
    pub(crate) fn schedule(&self, epoch: usize) -> (f64, Option<usize>) {
        if epoch < self.epochs {
            (decayed_lr(self.lr, self.lr_final_fraction, epoch, self.epochs), self.batch_size.rows())
        } else {
            let start = self.lr * self.polish_lr_fraction;
            (decayed_lr(start, self.lr_final_fraction, epoch - self.epochs, self.polish_epochs), None)
        }
    }
}

/// Linear ramp over the first `warmup_epochs` epochs, counted in batches.
pub(crate) fn warmup_factor(epoch: usize, batch: usize, n_batches: usize, warmup_epochs: usize) -> f64 {
    if epoch >= warmup_epochs {
        return 1.0;
    }
    (epoch * n_batches + batch + 1) as f64 / (warmup_epochs * n_batches) as f64
}

pub(crate) fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive and finite, got {v}")))
    }
}

pub(crate) fn unit_interval(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must lie in (0, 1], got {v}")))
    }
}

pub(crate) fn non_negative(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be non-negative and finite, got {v}")))
    }
}

pub(crate) fn check_level(utility: &dyn Utility, level: f64) -> Result<()> {
    let sup = utility.sup();
    if !level.is_finite() || level >= sup {
        return Err(Error::LevelNotBelowSup { level, sup });
    }
    Ok(())
}

pub(crate) fn decayed_lr(lr: f64, final_fraction: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return lr;
    }
    lr * final_fraction.powf(epoch as f64 / (epochs - 1) as f64)
}

/// Decides whether the hinge is active for a mini-batch.
///
/// With `smoothing = 1` the batch slack alone decides. Smaller values use an
/// exponentially weighted average of recent batch slacks, which keeps a single
/// extreme scenario from switching the hinge on for its own batch.
#[derive(Clone, Debug)]
pub struct HingeState {
    smoothing: f64,
    average: Option<f64>,
}

impl HingeState {
    pub fn new(smoothing: f64) -> Self {
        Self { smoothing, average: None }
    }

    pub fn per_batch() -> Self {
        Self::new(1.0)
    }

    pub fn decide(&mut self, batch_slack: f64) -> bool {
        let avg = match self.average {
            Some(prev) => prev + self.smoothing * (batch_slack - prev),
            None => batch_slack,
        };
        self.average = Some(avg);
        avg > 0.0
    }

    pub fn average(&self) -> Option<f64> {
        self.average
    }
}

/// Value and upstream gradient of the penalised primal objective on a batch.
#[derive(Clone, Debug)]
pub struct PrimalLoss {
    pub value: f64,
    pub mean_sum: f64,
    pub variance_of_sum: f64,
    /// `B − mean U(X + Y)`; negative when the batch is strictly acceptable.
    pub acceptance_slack: f64,
    /// `∂J/∂Y`, shaped like the allocations.
    pub upstream: Array2<f64>,
}

/// Evaluates the objective for allocations `y` of scenarios `x`.
pub fn loss_primal(utility: &dyn Utility, x: ArrayView2<f64>, y: ArrayView2<f64>, mu: f64, lambda_a: f64, level: f64) -> Result<PrimalLoss> {
    loss_primal_with(utility, x, y, mu, lambda_a, level, &mut HingeState::per_batch())
}

/// As [`loss_primal`], with the hinge indicator taken from `hinge`.
pub fn loss_primal_with(
    utility: &dyn Utility,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    mu: f64,
    lambda_a: f64,
    level: f64,
    hinge: &mut HingeState,
) -> Result<PrimalLoss> {
    let (m, n) = x.dim();
    if y.dim() != (m, n) {
        return Err(Error::Shape(format!("allocations {:?} vs scenarios {:?}", y.dim(), x.dim())));
    }
    if n != utility.n_agents() {
        return Err(Error::DimensionMismatch { expected: utility.n_agents(), got: n });
    }
    if m == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let sums: Vec<f64> = y.sum_axis(Axis(1)).to_vec();
    let mean_sum = stats::mean(&sums);
    let variance_of_sum = stats::variance(&sums);

    let mut z = vec![0.0; n];
    let mut utilities = Vec::with_capacity(m);
    for (xr, yr) in x.rows().into_iter().zip(y.rows()) {
        for j in 0..n {
            z[j] = xr[j] + yr[j];
        }
        utilities.push(utility.value(&z));
    }
    let acceptance_slack = level - stats::mean(&utilities);
    let active = hinge.decide(acceptance_slack);
    let value = mean_sum + mu * variance_of_sum + lambda_a * acceptance_slack.max(0.0);

    let inv_m = 1.0 / m as f64;
    let mut upstream = Array2::zeros((m, n));
    let mut grad = vec![0.0; n];
    for (i, mut row) in upstream.rows_mut().into_iter().enumerate() {
        let common = inv_m + 2.0 * mu * (sums[i] - mean_sum) * inv_m;
        if active {
            for j in 0..n {
                z[j] = x[[i, j]] + y[[i, j]];
            }
            utility.gradient(&z, &mut grad);
            for j in 0..n {
                row[j] = common - lambda_a * grad[j] * inv_m;
            }
        } else {
            row.fill(common);
        }
    }
    Ok(PrimalLoss { value, mean_sum, variance_of_sum, acceptance_slack, upstream })
}

/// Trained allocation network together with its evaluation on a sample.
#[derive(Clone, Debug)]
pub struct PrimalSolution {
    pub rho_hat: f64,
    pub y_samples: Array2<f64>,
    pub variance_of_sum: f64,
    pub acceptance_slack: f64,
    pub loss_history: Vec<f64>,
    /// Hinge weight actually used in the loss.
    pub lambda_effective: f64,
    pub network: Mlp,
}

/// JSON-friendly part of a [`PrimalSolution`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalSummary {
    pub rho_hat: f64,
    pub variance_of_sum: f64,
    pub acceptance_slack: f64,
    pub penalised_objective: f64,
    pub lambda_effective: f64,
    pub loss_history: Vec<f64>,
}

impl PrimalSolution {
    pub fn summary(&self, cfg: &PrimalConfig) -> PrimalSummary {
        PrimalSummary {
            rho_hat: self.rho_hat,
            variance_of_sum: self.variance_of_sum,
            acceptance_slack: self.acceptance_slack,
            penalised_objective: self.rho_hat + cfg.mu * self.variance_of_sum + self.lambda_effective * self.acceptance_slack.max(0.0),
            lambda_effective: self.lambda_effective,
            loss_history: self.loss_history.clone(),
        }
    }

    /// Re-evaluates the trained network on another sample, e.g. a test set.
    pub fn evaluate(&self, utility: &dyn Utility, scenarios: &ScenarioSet, cfg: &PrimalConfig) -> Result<PrimalSolution> {
        let mut out = evaluate_network(utility, &self.network, scenarios, cfg.mu, self.lambda_effective, cfg.level)?;
        out.loss_history = self.loss_history.clone();
        Ok(out)
    }
}

/// Evaluates a trained network on `scenarios` with hinge weight `lambda`.
pub fn evaluate_network(utility: &dyn Utility, net: &Mlp, scenarios: &ScenarioSet, mu: f64, lambda: f64, level: f64) -> Result<PrimalSolution> {
    let x = scenarios.data().view();
    let y = net.forward(x)?;
    let loss = loss_primal(utility, x, y.view(), mu, lambda, level)?;
    Ok(PrimalSolution {
        lambda_effective: lambda,
        rho_hat: loss.mean_sum,
        y_samples: y,
        variance_of_sum: loss.variance_of_sum,
        acceptance_slack: loss.acceptance_slack,
        loss_history: Vec::new(),
        network: net.clone(),
    })
}

fn gather(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Runs SGD for `cfg.epochs` passes and evaluates the final network on the
/// training sample.
pub fn train(utility: &dyn Utility, scenarios: &ScenarioSet, cfg: &PrimalConfig) -> Result<PrimalSolution> {
    train_with_observer(utility, scenarios, cfg, |_, _| {})
}

/// As [`train`], calling `observe(epoch, loss)` after every epoch.
pub fn train_with_observer(
    utility: &dyn Utility,
    scenarios: &ScenarioSet,
    cfg: &PrimalConfig,
    mut observe: impl FnMut(usize, f64),
) -> Result<PrimalSolution> {
    cfg.validate(utility)?;
    if scenarios.n_agents() != utility.n_agents() {
        return Err(Error::DimensionMismatch { expected: utility.n_agents(), got: scenarios.n_agents() });
    }
    let x = scenarios.data().view();
    let n = scenarios.n_agents();
    let mut net = cfg.network.build(x, n, OutputHead::Identity, cfg.seed)?;
    let shift = binding_uniform_shift(utility, x, cfg.level)?;
    if cfg.warm_start {
        net.set_output_bias(&vec![shift; n])?;
    }
    let lambda = effective_hinge_weight(utility, x, shift, cfg.lambda_a, cfg.hinge_scale);
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let total = cfg.epochs + cfg.polish_epochs;
    let mut history = Vec::with_capacity(total);
    let mut smoothed = HingeState::new(cfg.hinge_smoothing);
    let mut exact = HingeState::per_batch();
    for epoch in 0..total {
        let (lr, batch_size) = cfg.schedule(epoch);
        let batches = epoch_batches(scenarios.n_samples(), batch_size, &mut shuffle);
        let mut epoch_loss = 0.0;
        for (b, rows) in batches.iter().enumerate() {
            let lr = lr * warmup_factor(epoch, b, batches.len(), cfg.warmup_epochs);
            let owned;
            let xb = if rows.len() == scenarios.n_samples() {
                x
            } else {
                owned = gather(x, rows);
                owned.view()
            };
            let tape = net.forward_with_tape(xb)?;
            let hinge = if batch_size.is_some() { &mut smoothed } else { &mut exact };
            let loss = loss_primal_with(utility, xb, tape.output().view(), cfg.mu, lambda, cfg.level, hinge)?;
            if !loss.value.is_finite() {
                return Err(Error::Divergence { epoch, detail: format!("primal loss is {}", loss.value) });
            }
            let grads = net.backward(&tape, loss.upstream.view())?;
            net.sgd_step(&grads, lr, Direction::Descent)?;
            epoch_loss += loss.value * rows.len() as f64;
        }
        if !net.is_finite() {
            return Err(Error::Divergence { epoch, detail: "non-finite network parameters".into() });
        }
        let epoch_loss = epoch_loss / scenarios.n_samples() as f64;
        history.push(epoch_loss);
        observe(epoch, epoch_loss);
    }
    let mut sol = evaluate_network(utility, &net, scenarios, cfg.mu, lambda, cfg.level)?;
    sol.loss_history = history;
    Ok(sol)
}

/// `N / mean Σ_n ∂U_n(X + t·1)`: the multiplier of the constraint when only
/// uniform cash shifts are allowed.
pub fn shift_multiplier(utility: &dyn Utility, x: ArrayView2<f64>, shift: f64) -> f64 {
    let n = x.ncols();
    let mut z = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut total = 0.0;
    for row in x.rows() {
        for j in 0..n {
            z[j] = row[j] + shift;
        }
        utility.gradient(&z, &mut grad);
        total += grad.iter().sum::<f64>();
    }
    n as f64 * x.nrows() as f64 / total
}

pub(crate) fn effective_hinge_weight(utility: &dyn Utility, x: ArrayView2<f64>, shift: f64, configured: f64, scale: HingeScale) -> f64 {
    match scale {
        HingeScale::Absolute => configured,
        HingeScale::Multiplier => configured * shift_multiplier(utility, x, shift),
    }
}

/// The shift `t` with `mean U(X + t·1) = level`, found by bracketing and
/// bisection. Relies only on `U` being increasing.
pub fn binding_uniform_shift(utility: &dyn Utility, x: ArrayView2<f64>, level: f64) -> Result<f64> {
    let n = x.ncols();
    let mut z = vec![0.0; n];
    let mut excess = |t: f64| {
        let mut total = 0.0;
        for row in x.rows() {
            for j in 0..n {
                z[j] = row[j] + t;
            }
            total += utility.value(&z);
        }
        total / x.nrows() as f64 - level
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut expansions = 0;
    while excess(lo) > 0.0 {
        lo *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::OutsideDomain("no binding shift below the level".into()));
        }
    }
    while excess(hi) < 0.0 {
        hi *= 2.0;
        expansions += 1;
        if expansions > 120 {
            return Err(Error::LevelNotBelowSup { level, sup: utility.sup() });
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(hi)
}

/// Row sums of the allocations.
pub fn allocation_sums(y: &Array2<f64>) -> Array1<f64> {
    y.sum_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::UtilitySpec;
    use ndarray::array;

    fn paired(alpha: &[f64]) -> UtilitySpec {
        UtilitySpec::PairedExponential { alpha: alpha.to_vec() }
    }

    #[test]
    fn warmup_ramps_over_batches() {
        assert_eq!(warmup_factor(0, 0, 4, 1), 0.25);
        assert_eq!(warmup_factor(0, 3, 4, 1), 1.0);
        assert_eq!(warmup_factor(1, 0, 2, 2), 0.75);
        assert_eq!(warmup_factor(2, 0, 2, 2), 1.0);
        assert_eq!(warmup_factor(0, 0, 10, 0), 1.0);
    }

    #[test]
    fn constant_allocations_have_no_variance_term() {
        let u = paired(&[1.0, 2.0]);
        let x = array![[0.1, 0.3], [0.5, -0.2], [0.0, 0.0]];
        let c = [0.4, -0.1];
        let y = Array2::from_shape_fn((3, 2), |(_, j)| c[j]);
        let loss = loss_primal(&u, x.view(), y.view(), 10.0, 10.0, -100.0).unwrap();
        assert_eq!(loss.variance_of_sum, 0.0);
        assert!((loss.value - 0.3).abs() < 1e-15);

        let level = 1.0;
        let loss = loss_primal(&u, x.view(), y.view(), 10.0, 7.0, level).unwrap();
        let mean_u = x.rows().into_iter().map(|r| u.value(&[r[0] + c[0], r[1] + c[1]])).sum::<f64>() / 3.0;
        assert!(level > mean_u);
        assert!((loss.value - (0.3 + 7.0 * (level - mean_u))).abs() < 1e-12);
    }

    #[test]
    fn trivial_single_agent_loss_is_zero() {
        let u = paired(&[1.0]);
        let zero = Array2::zeros((4, 1));
        let loss = loss_primal(&u, zero.view(), zero.view(), 10.0, 10.0, 0.0).unwrap();
        assert_eq!(loss.value, 0.0);
        assert_eq!(loss.acceptance_slack, 0.0);
    }

    #[test]
    fn upstream_matches_finite_differences() {
        let u = paired(&[1.0, 1.5, 2.0]);
        let x = array![[0.1, 0.3, -0.2], [0.5, -0.2, 0.0], [0.2, 0.2, 0.9], [-0.4, 0.1, 0.3]];
        let y = array![[0.0, 0.1, 0.2], [-0.3, 0.2, 0.1], [0.1, -0.1, 0.0], [0.3, 0.3, -0.2]];
        let (mu, lam, level) = (3.0, 5.0, 3.5);
        let loss = loss_primal(&u, x.view(), y.view(), mu, lam, level).unwrap();
        assert!(loss.acceptance_slack > 0.0);
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                let mut yp = y.clone();
                yp[[i, j]] += h;
                let mut ym = y.clone();
                ym[[i, j]] -= h;
                let fd = (loss_primal(&u, x.view(), yp.view(), mu, lam, level).unwrap().value
                    - loss_primal(&u, x.view(), ym.view(), mu, lam, level).unwrap().value)
                    / (2.0 * h);
                assert!((fd - loss.upstream[[i, j]]).abs() < 1e-7, "({i},{j}) {fd} vs {}", loss.upstream[[i, j]]);
            }
        }
    }

    #[test]
    fn shape_and_config_errors() {
        let u = paired(&[1.0, 1.0]);
        let x = Array2::zeros((3, 2));
        assert!(loss_primal(&u, x.view(), Array2::zeros((3, 1)).view(), 1.0, 1.0, 0.0).is_err());
        let set = ScenarioSet::from_matrix(x).unwrap();
        let cfg = PrimalConfig { level: 2.0, ..PrimalConfig::default() };
        assert!(matches!(train(&u, &set, &cfg), Err(Error::LevelNotBelowSup { .. })));
        let cfg = PrimalConfig { lr: 0.0, ..PrimalConfig::default() };
        assert!(matches!(train(&u, &set, &cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn binding_shift_solves_the_constraint() {
        // One agent, U(x) = 1/2 − e^{−2x}/2, X ≡ 0: 1/2 − e^{−2t}/2 = B.
        let u = paired(&[1.0]);
        let x = Array2::zeros((3, 1));
        let level = -1.0;
        let t = binding_uniform_shift(&u, x.view(), level).unwrap();
        assert!((t - (-(3f64).ln() / 2.0)).abs() < 1e-12);
        let x = array![[0.2, -0.1], [0.4, 0.3]];
        let u2 = paired(&[1.0, 2.0]);
        let t = binding_uniform_shift(&u2, x.view(), -3.0).unwrap();
        let mean_u = x.rows().into_iter().map(|r| u2.value(&[r[0] + t, r[1] + t])).sum::<f64>() / 2.0;
        assert!((mean_u + 3.0).abs() < 1e-9);
    }

    #[test]
    fn hinge_state_smooths() {
        let mut h = HingeState::new(0.5);
        assert!(h.decide(1.0));
        assert!(h.decide(-0.5));
        assert_eq!(h.average(), Some(0.25));
        assert!(!h.decide(-1.0));
        let mut plain = HingeState::per_batch();
        assert!(plain.decide(0.1));
        assert!(!plain.decide(-0.1));
    }

    #[test]
    fn shift_multiplier_single_agent() {
        // U'(t) = e^{−2t} for α = 1, N = 1.
        let u = paired(&[1.0]);
        let x = Array2::zeros((5, 1));
        let t = -0.3;
        assert!((shift_multiplier(&u, x.view(), t) - (2.0 * t).exp()).abs() < 1e-14);
        assert_eq!(effective_hinge_weight(&u, x.view(), t, 4.0, HingeScale::Absolute), 4.0);
    }

    #[test]
    fn trivial_problem_trains_to_zero() {
        let u = paired(&[1.0]);
        let set = ScenarioSet::from_matrix(Array2::zeros((200, 1))).unwrap();
        let cfg = PrimalConfig { level: 0.0, epochs: 20, polish_epochs: 20, batch_size: BatchSize::Rows(50), ..PrimalConfig::default() };
        let sol = train(&u, &set, &cfg).unwrap();
        assert!(sol.rho_hat.abs() <= 0.05, "{}", sol.rho_hat);
        assert_eq!(sol.loss_history.len(), 40);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let u = paired(&[1.0, 2.0]);
        let spec = crate::scenario::DistributionSpec::gaussian(2, 300, 0.5, 0.2, 0.3, 4);
        let set = crate::scenario::generate(&spec).unwrap();
        let cfg = PrimalConfig { epochs: 5, polish_epochs: 2, network: NetworkConfig { hidden_layers: vec![8], ..NetworkConfig::default() }, ..PrimalConfig::default() };
        let a = train(&u, &set, &cfg).unwrap();
        let b = train(&u, &set, &cfg).unwrap();
        assert_eq!(a.y_samples, b.y_samples);
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let u = paired(&[1.0, 2.0]);
        let set = ScenarioSet::from_matrix(array![[0.1, 0.2], [0.3, -0.1], [0.0, 0.5]]).unwrap();
        let cfg = PrimalConfig { lr: 1e6, epochs: 50, level: -1.0, ..PrimalConfig::default() };
        assert!(matches!(train(&u, &set, &cfg), Err(Error::Divergence { .. })));
    }
}
