//! Closed-form solution of the systemic shortfall problem for the paired
//! exponential utility.
//!
//! With `β = Σ 1/α_j`, `Γ = Σ (1/α_j) log(1/α_j)`, `λ̂(B) = (N² − 2B)/β` and
//! `d(X) = (β/2) log(β²/(N² − 2B) · E[e^{−2S/β}])`:
//!
//! * `ρ_B(X) = d(X) − Γ`
//! * `Y^n = −X^n + (S + d)/(β α_n) − (1/α_n) log(1/α_n)`
//! * `dQ/dP = e^{−2S/β} / E[e^{−2S/β}]`
//! * `α_B(Q) = (Γ − β log β / 2) + (β/2) log λ̂(B) + (β/2) H(Q|P)`
//!
//! Expectations are sample means over the supplied [`ScenarioSet`], so every
//! identity between these quantities holds exactly on the sample, up to
//! floating-point rounding.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ScenarioSet;
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedExpConstants {
    /// `Σ 1/α_j`
    pub beta: f64,
    /// `Σ (1/α_j) log(1/α_j)`
    pub gamma_const: f64,
    /// `(N² − 2B)/β`
    pub lambda_hat: f64,
    pub d_value: f64,
    /// `(1/α_j) log(1/α_j)` per agent.
    pub a_terms: Vec<f64>,
    /// `log E[e^{−2S/β}]` on the sample.
    pub log_mean_exp: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSolution {
    pub rho: f64,
    pub y_opt: Array2<f64>,
    pub rn_derivative: Array1<f64>,
    pub penalty_at_optimum: f64,
    pub fair_allocations: Vec<f64>,
    pub relative_entropy: f64,
    pub constants: PairedExpConstants,
}

fn check_inputs(alpha: &[f64], level: f64) -> Result<()> {
    if alpha.is_empty() || alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::OutsideDomain("alpha entries must be finite and positive".into()));
    }
    let n = alpha.len() as f64;
    let sup = 0.5 * n * n;
    if !(level < sup) {
        return Err(Error::LevelNotBelowSup { level, sup });
    }
    Ok(())
}

/// Constants that depend only on `α` and `B`: `(β, Γ, λ̂, A_j)`.
fn structural(alpha: &[f64], level: f64) -> (f64, f64, f64, Vec<f64>) {
    let n = alpha.len() as f64;
    let beta: f64 = alpha.iter().map(|a| 1.0 / a).sum();
    let a_terms: Vec<f64> = alpha.iter().map(|a| (1.0 / a) * (1.0 / a).ln()).collect();
    let gamma: f64 = a_terms.iter().sum();
    let lambda_hat = (n * n - 2.0 * level) / beta;
    (beta, gamma, lambda_hat, a_terms)
}

pub fn compute_constants(alpha: &[f64], level: f64, scenarios: &ScenarioSet) -> Result<PairedExpConstants> {
    check_inputs(alpha, level)?;
    if scenarios.n_agents() != alpha.len() {
        return Err(Error::DimensionMismatch { expected: alpha.len(), got: scenarios.n_agents() });
    }
    let n = alpha.len() as f64;
    let (beta, gamma_const, lambda_hat, a_terms) = structural(alpha, level);
    let scaled: Vec<f64> = scenarios.sums().iter().map(|s| -2.0 * s / beta).collect();
    let lme = stats::log_mean_exp(&scaled);
    let d_value = 0.5 * beta * ((beta * beta / (n * n - 2.0 * level)).ln() + lme);
    Ok(PairedExpConstants {
        beta,
        gamma_const,
        lambda_hat,
        d_value,
        a_terms,
        log_mean_exp: lme,
        n_samples: scenarios.n_samples(),
    })
}

/// Sample relative entropy `mean(r log r)` with `0 log 0 = 0`.
pub fn relative_entropy(rn: &[f64]) -> f64 {
    let terms: Vec<f64> = rn.iter().map(|&r| if r > 0.0 { r * r.ln() } else { 0.0 }).collect();
    stats::mean(&terms)
}

/// Penalty `α_B(Q)` for a measure given by its density samples.
pub fn penalty(alpha: &[f64], level: f64, rn_samples: &[f64]) -> Result<f64> {
    check_inputs(alpha, level)?;
    if rn_samples.is_empty() {
        return Err(Error::OutsideDomain("empty density sample".into()));
    }
    if rn_samples.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::OutsideDomain("density samples must be positive".into()));
    }
    let m = stats::mean(rn_samples);
    if (m - 1.0).abs() > 1e-8 {
        return Err(Error::OutsideDomain(format!("density samples must average 1, got {m}")));
    }
    Ok(penalty_unchecked(alpha, level, relative_entropy(rn_samples)))
}

fn penalty_unchecked(alpha: &[f64], level: f64, entropy: f64) -> f64 {
    let (beta, gamma, lambda_hat, _) = structural(alpha, level);
    (gamma - 0.5 * beta * beta.ln()) + 0.5 * beta * lambda_hat.ln() + 0.5 * beta * entropy
}

pub fn solve(alpha: &[f64], level: f64, scenarios: &ScenarioSet) -> Result<AnalyticSolution> {
    let constants = compute_constants(alpha, level, scenarios)?;
    let PairedExpConstants { beta, gamma_const, d_value, .. } = constants;
    let m = scenarios.n_samples();
    let n = alpha.len();
    let x = scenarios.data();
    let sums = scenarios.sums();

    let mut y_opt = Array2::<f64>::zeros((m, n));
    for (i, mut row) in y_opt.rows_mut().into_iter().enumerate() {
        let common = sums[i] + d_value;
        for j in 0..n {
            row[j] = -x[[i, j]] + common / (beta * alpha[j]) - constants.a_terms[j];
        }
    }

    // Normalise by the sample mean so the weights average to one on this sample.
    let s_min = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = sums.iter().map(|s| (-2.0 * (s - s_min) / beta).exp()).collect();
    let raw_mean = stats::mean(&raw);
    let rn: Vec<f64> = raw.iter().map(|r| r / raw_mean).collect();

    let entropy = relative_entropy(&rn);
    let penalty_at_optimum = penalty_unchecked(alpha, level, entropy);
    let fair_allocations = (0..n).map(|j| stats::mean_product(&y_opt.column(j).to_vec(), &rn)).collect();

    Ok(AnalyticSolution {
        rho: d_value - gamma_const,
        y_opt,
        rn_derivative: Array1::from(rn),
        penalty_at_optimum,
        fair_allocations,
        relative_entropy: entropy,
        constants,
    })
}

/// `|ρ − (Σ_n E_Q[−X^n] − α_B(Q))|` evaluated with the solution's own density.
pub fn dual_value_check(solution: &AnalyticSolution, scenarios: &ScenarioSet) -> f64 {
    let neg_sums: Vec<f64> = scenarios.sums().iter().map(|s| -s).collect();
    let expected_loss = stats::mean_product(&neg_sums, solution.rn_derivative.as_slice().unwrap());
    (solution.rho - (expected_loss - solution.penalty_at_optimum)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate, DistributionSpec};
    use crate::utility::{Utility, UtilitySpec};

    const BENCHMARK_ALPHA: [f64; 10] = [1.11, 1.20, 1.36, 1.89, 1.94, 2.04, 2.27, 2.33, 2.63, 2.99];

    fn constant_set(m: usize, values: &[f64]) -> ScenarioSet {
        let data = Array2::from_shape_fn((m, values.len()), |(_, j)| values[j]);
        ScenarioSet::from_matrix(data).unwrap()
    }

    fn gaussian() -> ScenarioSet {
        generate(&DistributionSpec::gaussian(10, 20_000, 1.45, 0.23, 0.3, 7)).unwrap()
    }

    #[test]
    fn trivial_single_agent_constants() {
        let c = compute_constants(&[1.0], 0.0, &constant_set(5, &[0.0])).unwrap();
        assert_eq!(c.beta, 1.0);
        assert_eq!(c.gamma_const, 0.0);
        assert_eq!(c.lambda_hat, 1.0);
        assert_eq!(c.d_value, 0.0);
    }

    #[test]
    fn benchmark_alpha_beta() {
        // Oracle: Σ 1/α_j summed by hand in exact decimal arithmetic.
        let c = compute_constants(&BENCHMARK_ALPHA, -5.0, &constant_set(1, &[0.0; 10])).unwrap();
        assert!((c.beta - 5.588_678_358_073_671).abs() < 1e-12, "{}", c.beta);
        assert!((c.beta - 5.5886).abs() < 1e-4);
    }

    #[test]
    fn deterministic_position_single_agent() {
        for c in [-2.0, 0.0, 0.7, 3.0] {
            let set = constant_set(8, &[c]);
            let k = compute_constants(&[1.0], 0.0, &set).unwrap();
            assert!((k.d_value + c).abs() < 1e-14);
            let sol = solve(&[1.0], 0.0, &set).unwrap();
            assert!((sol.rho + c).abs() < 1e-14);
            assert!(sol.y_opt.iter().all(|y| (y + c).abs() < 1e-14));
            assert!(sol.rn_derivative.iter().all(|r| (r - 1.0).abs() < 1e-15));
            assert!(sol.penalty_at_optimum.abs() < 1e-14);
            assert!((sol.fair_allocations[0] + c).abs() < 1e-14);
            assert!(dual_value_check(&sol, &set) < 1e-14);
        }
    }

    #[test]
    fn level_at_sup_is_rejected() {
        let set = constant_set(2, &[0.0, 0.0]);
        assert!(matches!(solve(&[1.0, 1.0], 2.0, &set), Err(Error::LevelNotBelowSup { .. })));
        assert!(compute_constants(&[1.0, 1.0], 1.999, &set).is_ok());
    }

    #[test]
    fn fixed_sum_is_risk_neutral() {
        let spec = DistributionSpec::gaussian(10, 5_000, 1.45, 0.23, 0.3, 2).with_fixed_sum(15.0);
        let set = generate(&spec).unwrap();
        let sol = solve(&BENCHMARK_ALPHA, -5.0, &set).unwrap();
        assert!(sol.rn_derivative.iter().all(|r| (r - 1.0).abs() < 1e-12));
        assert!((sol.rho + sol.penalty_at_optimum + 15.0).abs() < 1e-10);
        assert!(dual_value_check(&sol, &set) < 1e-10);
        // σ(S)-measurability: every scenario maps to the same secured position.
        let secured = set.data() + &sol.y_opt;
        let first = secured.row(0).to_owned();
        for row in secured.rows() {
            for (a, b) in row.iter().zip(first.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gaussian_sample_identities() {
        let set = gaussian();
        let sol = solve(&BENCHMARK_ALPHA, -5.0, &set).unwrap();
        assert!(dual_value_check(&sol, &set) <= 1e-8);
        assert!((stats::mean(sol.rn_derivative.as_slice().unwrap()) - 1.0).abs() < 1e-12);
        let target = sol.rho;
        for row in sol.y_opt.rows() {
            assert!((row.sum() - target).abs() <= 1e-10);
        }
        let total: f64 = sol.fair_allocations.iter().sum();
        assert!((total - sol.rho).abs() <= 1e-8);
        assert!((penalty(&BENCHMARK_ALPHA, -5.0, sol.rn_derivative.as_slice().unwrap()).unwrap() - sol.penalty_at_optimum).abs() < 1e-14);
    }

    #[test]
    fn optimum_is_exactly_feasible_on_the_sample() {
        let set = gaussian();
        let sol = solve(&BENCHMARK_ALPHA, -5.0, &set).unwrap();
        let u = UtilitySpec::PairedExponential { alpha: BENCHMARK_ALPHA.to_vec() };
        let secured = set.data() + &sol.y_opt;
        let values: Vec<f64> = secured.rows().into_iter().map(|r| u.value(r.as_slice().unwrap())).collect();
        let se = (stats::variance(&values) / values.len() as f64).sqrt();
        assert!((stats::mean(&values) + 5.0).abs() <= 3.0 * se);
        assert!((stats::mean(&values) + 5.0).abs() <= 1e-9);
    }

    #[test]
    fn density_decreases_in_aggregate() {
        let set = gaussian();
        let sol = solve(&BENCHMARK_ALPHA, -5.0, &set).unwrap();
        let mut pairs: Vec<(f64, f64)> = set.sums().iter().copied().zip(sol.rn_derivative.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn cash_additivity_is_exact() {
        let set = gaussian();
        let shift: Vec<f64> = (0..10).map(|j| 0.1 * j as f64 - 0.3).collect();
        let base = solve(&BENCHMARK_ALPHA, -5.0, &set).unwrap();
        let moved = solve(&BENCHMARK_ALPHA, -5.0, &set.shifted(&shift).unwrap()).unwrap();
        let total: f64 = shift.iter().sum();
        assert!((moved.rho - (base.rho - total)).abs() < 1e-10);
    }

    #[test]
    fn penalty_for_the_reference_measure() {
        let (beta, gamma, lambda_hat, _) = structural(&BENCHMARK_ALPHA, -5.0);
        let p = penalty(&BENCHMARK_ALPHA, -5.0, &[1.0; 16]).unwrap();
        assert!((p - ((gamma - 0.5 * beta * beta.ln()) + 0.5 * beta * lambda_hat.ln())).abs() < 1e-14);
    }

    #[test]
    fn two_point_entropy_approaches_log_two() {
        // Direct sum: ½[(2−ε)log(2−ε) + ε log ε] → log 2.
        let eps = 1e-12;
        let h = relative_entropy(&[2.0 - eps, eps]);
        assert!((h - 2f64.ln()).abs() < 1e-9);
        let p = penalty(&[1.0], 0.0, &[2.0 - eps, eps]).unwrap();
        // β = 1, Γ = 0, λ̂ = 1.
        assert!((p - 0.5 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn penalty_rejects_bad_densities() {
        assert!(penalty(&[1.0], 0.0, &[2.0, 0.0]).is_err());
        assert!(penalty(&[1.0], 0.0, &[1.5, 1.0]).is_err());
        assert!(penalty(&[1.0], 0.0, &[]).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn closed_form_invariants(
            alpha in proptest::collection::vec(0.3f64..3.0, 1..5),
            cells in proptest::collection::vec(-3.0f64..3.0, 4 * 40),
            m in 2usize..40,
            level in -10.0f64..-0.1,
            shift in -2.0f64..2.0,
        ) {
            let n = alpha.len();
            let data = Array2::from_shape_fn((m, n), |(i, j)| cells[i * 4 + j]);
            let set = ScenarioSet::from_matrix(data).unwrap();
            let sol = solve(&alpha, level, &set).unwrap();
            let tol = 1e-9 * (1.0 + sol.rho.abs());
            for row in sol.y_opt.rows() {
                proptest::prop_assert!((row.sum() - sol.rho).abs() <= tol);
            }
            proptest::prop_assert!((stats::mean(sol.rn_derivative.as_slice().unwrap()) - 1.0).abs() <= 1e-12);
            proptest::prop_assert!((sol.fair_allocations.iter().sum::<f64>() - sol.rho).abs() <= tol);
            proptest::prop_assert!(dual_value_check(&sol, &set) <= tol);
            let mut pairs: Vec<(f64, f64)> = set.sums().iter().copied().zip(sol.rn_derivative.iter().copied()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            proptest::prop_assert!(pairs.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12)));
            let shifts: Vec<f64> = (0..n).map(|j| shift * (j as f64 + 1.0)).collect();
            let moved = solve(&alpha, level, &set.shifted(&shifts).unwrap()).unwrap();
            let total: f64 = shifts.iter().sum();
            proptest::prop_assert!((moved.rho - (sol.rho - total)).abs() <= 1e-9 * (1.0 + sol.rho.abs() + total.abs()));
        }
    }
}
