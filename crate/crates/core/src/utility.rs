//! Multivariate utilities `U(x) = Σ_n u_n(x^n) + Λ(x)` and the convex
//! conjugate of the paired exponential utility.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent magnitude above which `exp` is clamped. Kept well below the
/// `f64` overflow point because the paired form squares a sum of exponentials.
pub const EXP_CLAMP: f64 = 300.0;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of exponent clamps since process start.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

#[inline]
fn guarded_exp(v: f64) -> f64 {
    if v.abs() > EXP_CLAMP {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        v.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
    } else {
        v.exp()
    }
}

/// A concave, increasing utility on `R^N`.
///
/// Implementations are evaluated in the inner loops of the solvers, so the
/// methods assume `x.len() == n_agents()`; use [`eval_u`] / [`grad_u`] for the
/// checked entry points.
pub trait Utility: Send + Sync {
    fn n_agents(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    /// `sup_x U(x)`; acceptance levels must lie strictly below it.
    fn sup(&self) -> f64;
}

/// The aggregate term `Λ` of a utility with exponential marginals.
///
/// The caller is responsible for `Λ` being concave, increasing and bounded
/// above; nothing here verifies it.
pub trait Aggregate: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn sup(&self) -> f64;
}

/// `Σ_n (1 − e^{−α_n x_n}) + Λ(x)` for a user supplied `Λ`.
pub struct ExponentialWithAggregate<A> {
    pub alpha: Vec<f64>,
    pub aggregate: A,
}

impl<A: Aggregate> Utility for ExponentialWithAggregate<A> {
    fn n_agents(&self) -> usize {
        self.alpha.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let marginal: f64 = self.alpha.iter().zip(x).map(|(a, xi)| 1.0 - guarded_exp(-a * xi)).sum();
        marginal + self.aggregate.value(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.aggregate.gradient(x, grad);
        for ((g, a), xi) in grad.iter_mut().zip(&self.alpha).zip(x) {
            *g += a * guarded_exp(-a * xi);
        }
    }

    fn sup(&self) -> f64 {
        self.alpha.len() as f64 + self.aggregate.sup()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UtilitySpec {
    /// `N²/2 − ½ (Σ_n e^{−α_n x_n})²`.
    PairedExponential { alpha: Vec<f64> },
    /// `Σ_n (1 − e^{−α_n x_n}) + 1 − e^{−p Σ_n β_n x_n}`.
    ExpPlusAggregate { alpha: Vec<f64>, beta: Vec<f64>, p: f64 },
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64], name: &str| -> Result<()> {
            if v.is_empty() || v.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                return Err(Error::config(name, "entries must be finite and positive"));
            }
            Ok(())
        };
        match self {
            UtilitySpec::PairedExponential { alpha } => positive(alpha, "utility.alpha"),
            UtilitySpec::ExpPlusAggregate { alpha, beta, p } => {
                positive(alpha, "utility.alpha")?;
                if beta.len() != alpha.len() {
                    return Err(Error::config("utility.beta", format!("needs {} entries", alpha.len())));
                }
                if beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
                    return Err(Error::config("utility.beta", "entries must be finite and non-negative"));
                }
                if !(*p > 1.0 && p.is_finite()) {
                    return Err(Error::config("utility.p", "must exceed 1"));
                }
                Ok(())
            }
        }
    }

    pub fn alpha(&self) -> &[f64] {
        match self {
            UtilitySpec::PairedExponential { alpha } | UtilitySpec::ExpPlusAggregate { alpha, .. } => alpha,
        }
    }

    pub fn is_paired_exponential(&self) -> bool {
        matches!(self, UtilitySpec::PairedExponential { .. })
    }
}

impl Utility for UtilitySpec {
    fn n_agents(&self) -> usize {
        self.alpha().len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self {
            UtilitySpec::PairedExponential { alpha } => {
                let n = alpha.len() as f64;
                let h: f64 = alpha.iter().zip(x).map(|(a, xi)| guarded_exp(-a * xi)).sum();
                0.5 * n * n - 0.5 * h * h
            }
            UtilitySpec::ExpPlusAggregate { alpha, beta, p } => {
                let marginal: f64 = alpha.iter().zip(x).map(|(a, xi)| 1.0 - guarded_exp(-a * xi)).sum();
                let lin: f64 = beta.iter().zip(x).map(|(b, xi)| b * xi).sum();
                marginal + 1.0 - guarded_exp(-p * lin)
            }
        }
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        match self {
            UtilitySpec::PairedExponential { alpha } => {
                let h: f64 = alpha.iter().zip(x).map(|(a, xi)| guarded_exp(-a * xi)).sum();
                for ((g, a), xi) in grad.iter_mut().zip(alpha).zip(x) {
                    *g = a * guarded_exp(-a * xi) * h;
                }
            }
            UtilitySpec::ExpPlusAggregate { alpha, beta, p } => {
                let lin: f64 = beta.iter().zip(x).map(|(b, xi)| b * xi).sum();
                let agg = p * guarded_exp(-p * lin);
                for (((g, a), b), xi) in grad.iter_mut().zip(alpha).zip(beta).zip(x) {
                    *g = a * guarded_exp(-a * xi) + agg * b;
                }
            }
        }
    }

    fn sup(&self) -> f64 {
        let n = self.n_agents() as f64;
        match self {
            UtilitySpec::PairedExponential { .. } => 0.5 * n * n,
            UtilitySpec::ExpPlusAggregate { .. } => n + 1.0,
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Checked evaluation of `U(x)`.
pub fn eval_u(u: &dyn Utility, x: &[f64]) -> Result<f64> {
    check_dim(u.n_agents(), x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutsideDomain("utility argument must be finite".into()));
    }
    Ok(u.value(x))
}

/// Checked evaluation of `∇U(x)`.
pub fn grad_u(u: &dyn Utility, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(u.n_agents(), x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutsideDomain("utility argument must be finite".into()));
    }
    let mut g = vec![0.0; x.len()];
    u.gradient(x, &mut g);
    Ok(g)
}

/// The paired exponential utility written as a sum of univariate and pairwise
/// terms: `½ Σ_n (1 − e^{−2α_n x_n}) + ½ Σ_{n≠m} (1 − e^{−(α_n x_n + α_m x_m)})`.
pub fn paired_exponential_expanded(alpha: &[f64], x: &[f64]) -> f64 {
    let mut total = 0.0;
    for (n, (an, xn)) in alpha.iter().zip(x).enumerate() {
        total += 0.5 * (1.0 - (-2.0 * an * xn).exp());
        for (m, (am, xm)) in alpha.iter().zip(x).enumerate() {
            if m != n {
                total += 0.5 * (1.0 - (-(an * xn + am * xm)).exp());
            }
        }
    }
    total
}

fn check_conjugate_args(alpha: &[f64], w: &[f64]) -> Result<()> {
    check_dim(alpha.len(), w.len())?;
    if alpha.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::OutsideDomain("alpha entries must be positive".into()));
    }
    if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::OutsideDomain("conjugate is only finite for w in (0, ∞)^N".into()));
    }
    Ok(())
}

/// `V(w) = sup_x (U(x) − ⟨x, w⟩)` for the paired exponential utility.
pub fn conjugate_v(alpha: &[f64], w: &[f64]) -> Result<f64> {
    check_conjugate_args(alpha, w)?;
    let n = alpha.len() as f64;
    let ratios: Vec<f64> = w.iter().zip(alpha).map(|(wj, aj)| wj / aj).collect();
    let total: f64 = ratios.iter().sum();
    let entropy_like: f64 = ratios.iter().map(|r| r * r.ln()).sum();
    Ok(0.5 * n * n + entropy_like - 0.5 * (total + total * total.ln()))
}

/// `∇V(w)`: component `j` is `(1/α_j) log(w_j/α_j) − (1/(2α_j)) log(Σ_k w_k/α_k)`.
pub fn grad_v(alpha: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    check_conjugate_args(alpha, w)?;
    let total: f64 = w.iter().zip(alpha).map(|(wj, aj)| wj / aj).sum();
    let log_total = total.ln();
    Ok(w.iter()
        .zip(alpha)
        .map(|(wj, aj)| (wj / aj).ln() / aj - log_total / (2.0 * aj))
        .collect())
}

/// `V(z, …, z)` via its diagonal closed form
/// `N²/2 + βz log z + zΓ − ½(zβ + βz log z + zβ log β)`.
pub fn conjugate_v_diagonal(alpha: &[f64], z: f64) -> Result<f64> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::OutsideDomain(format!("z must be positive, got {z}")));
    }
    let n = alpha.len() as f64;
    let beta: f64 = alpha.iter().map(|a| 1.0 / a).sum();
    let gamma: f64 = alpha.iter().map(|a| (1.0 / a) * (1.0 / a).ln()).sum();
    let zl = z.ln();
    Ok(0.5 * n * n + beta * z * zl + z * gamma - 0.5 * (z * beta + beta * z * zl + z * beta * beta.ln()))
}

/// `∂V/∂w_j` at the diagonal point `(z, …, z)`:
/// `(1/α_j) log(z/α_j) − (1/(2α_j)) log(zβ)` with `β = Σ 1/α_j`.
pub fn grad_v_diagonal(alpha: &[f64], z: f64) -> Result<Vec<f64>> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::OutsideDomain(format!("z must be positive, got {z}")));
    }
    if alpha.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::OutsideDomain("alpha entries must be positive".into()));
    }
    let beta: f64 = alpha.iter().map(|a| 1.0 / a).sum();
    let log_zb = (z * beta).ln();
    Ok(alpha.iter().map(|a| (z / a).ln() / a - log_zb / (2.0 * a)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn paired(alpha: &[f64]) -> UtilitySpec {
        UtilitySpec::PairedExponential { alpha: alpha.to_vec() }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    #[test]
    fn zero_is_neutral() {
        for n in 1..6 {
            let u = paired(&vec![1.3; n]);
            assert_eq!(eval_u(&u, &vec![0.0; n]).unwrap(), 0.0);
        }
        let u = UtilitySpec::ExpPlusAggregate { alpha: vec![1.0, 2.0], beta: vec![0.3, 0.5], p: 2.0 };
        assert_eq!(eval_u(&u, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_agent_hand_value() {
        let u = paired(&[1.0]);
        let v = eval_u(&u, &[2f64.ln()]).unwrap();
        assert!((v - 0.375).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let u = paired(&[1.0, 2.0]);
        assert!(matches!(eval_u(&u, &[0.0]), Err(Error::DimensionMismatch { expected: 2, got: 1 })));
        assert!(grad_u(&u, &[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn gradient_at_origin() {
        let alpha = [1.11, 1.2, 1.36, 1.89];
        let g = grad_u(&paired(&alpha), &[0.0; 4]).unwrap();
        for (gj, aj) in g.iter().zip(alpha) {
            assert!((gj - aj * 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn aggregate_free_gradient() {
        let u = UtilitySpec::ExpPlusAggregate { alpha: vec![1.5, 2.5], beta: vec![0.0, 0.0], p: 2.0 };
        let x = [0.3, -0.4];
        let g = grad_u(&u, &x).unwrap();
        assert!((g[0] - 1.5 * (-0.45f64).exp()).abs() < 1e-15);
        assert!((g[1] - 2.5 * (1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-5;
        for trial in 0..50 {
            let n = 1 + trial % 6;
            let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
            let beta: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let utilities = [paired(&alpha), UtilitySpec::ExpPlusAggregate { alpha: alpha.clone(), beta, p: 2.0 }];
            for u in &utilities {
                let g = grad_u(u, &x).unwrap();
                for j in 0..n {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (u.value(&xp) - u.value(&xm)) / (2.0 * h);
                    assert!(rel_err(g[j], fd) <= 1e-6, "trial {trial} j {j}: {} vs {fd}", g[j]);
                    assert!(g[j] > 0.0);
                }
            }
        }
    }

    #[test]
    fn clamp_keeps_values_finite() {
        let before = clamp_events();
        let u = paired(&[1.0]);
        assert!(u.value(&[-1000.0]).is_finite());
        assert!(clamp_events() > before);
    }

    #[test]
    fn custom_aggregate_matches_builtin() {
        struct ExpAgg {
            beta: Vec<f64>,
            p: f64,
        }
        impl Aggregate for ExpAgg {
            fn value(&self, x: &[f64]) -> f64 {
                1.0 - (-self.p * self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()).exp()
            }
            fn gradient(&self, x: &[f64], grad: &mut [f64]) {
                let e = self.p * (-self.p * self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()).exp();
                for (g, b) in grad.iter_mut().zip(&self.beta) {
                    *g = e * b;
                }
            }
            fn sup(&self) -> f64 {
                1.0
            }
        }
        let custom = ExponentialWithAggregate { alpha: vec![1.0, 2.0], aggregate: ExpAgg { beta: vec![0.2, 0.7], p: 2.0 } };
        let builtin = UtilitySpec::ExpPlusAggregate { alpha: vec![1.0, 2.0], beta: vec![0.2, 0.7], p: 2.0 };
        let x = [0.4, -0.3];
        assert!((custom.value(&x) - builtin.value(&x)).abs() < 1e-14);
        assert_eq!(grad_u(&custom, &x).unwrap(), grad_u(&builtin, &x).unwrap());
        assert_eq!(custom.sup(), builtin.sup());
    }

    #[test]
    fn conjugate_single_agent_unit_point() {
        assert!(conjugate_v(&[1.0], &[1.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn conjugate_rejects_nonpositive_w() {
        assert!(conjugate_v(&[1.0, 2.0], &[1.0, 0.0]).is_err());
        assert!(conjugate_v(&[1.0, 2.0], &[-1.0, 1.0]).is_err());
        assert!(grad_v_diagonal(&[1.0], 0.0).is_err());
    }

    #[test]
    fn diagonal_gradient_single_agent() {
        for z in [0.3, 1.0, 4.0] {
            let g = grad_v_diagonal(&[1.0], z).unwrap();
            assert!((g[0] - 0.5 * f64::ln(z)).abs() < 1e-15);
        }
    }

    #[test]
    fn fenchel_inequality_by_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = rng.random_range(1..5);
            let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
            let v = conjugate_v(&alpha, &w).unwrap();
            let u = paired(&alpha);
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
                let lin: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                assert!(v >= u.value(&x) - lin - 1e-10);
            }
        }
    }

    const BENCHMARK_ALPHA: [f64; 10] = [1.11, 1.20, 1.36, 1.89, 1.94, 2.04, 2.27, 2.33, 2.63, 2.99];

    #[test]
    fn diagonal_gradient_matches_finite_differences() {
        let h = 1e-5;
        for z in [0.1, 0.5, 1.0, 3.0, 10.0] {
            let g = grad_v_diagonal(&BENCHMARK_ALPHA, z).unwrap();
            for j in 0..BENCHMARK_ALPHA.len() {
                let mut wp = vec![z; 10];
                let mut wm = vec![z; 10];
                wp[j] += h;
                wm[j] -= h;
                let fd = (conjugate_v(&BENCHMARK_ALPHA, &wp).unwrap() - conjugate_v(&BENCHMARK_ALPHA, &wm).unwrap()) / (2.0 * h);
                assert!(rel_err(g[j], fd) <= 1e-6, "z {z} j {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn diagonal_closed_form_matches_general_conjugate() {
        for z in [0.1, 1.0, 10.0] {
            let general = conjugate_v(&BENCHMARK_ALPHA, &[z; 10]).unwrap();
            let diagonal = conjugate_v_diagonal(&BENCHMARK_ALPHA, z).unwrap();
            assert!((general - diagonal).abs() <= 1e-10, "z {z}: {general} vs {diagonal}");
        }
    }

    #[test]
    fn diagonal_euler_identity() {
        let beta: f64 = BENCHMARK_ALPHA.iter().map(|a| 1.0 / a).sum();
        for z in [0.1, 1.0, 10.0] {
            let v = conjugate_v_diagonal(&BENCHMARK_ALPHA, z).unwrap();
            let g: f64 = grad_v_diagonal(&BENCHMARK_ALPHA, z).unwrap().iter().sum();
            let lhs = v - z * g;
            assert!((lhs - (50.0 - 0.5 * beta * z)).abs() <= 1e-10, "z {z}");
        }
    }

    proptest! {
        #[test]
        fn two_forms_of_paired_exponential_agree(
            alpha in prop::collection::vec(0.5f64..3.0, 1..8),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = alpha.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
            let direct = paired(&alpha).value(&x);
            let expanded = paired_exponential_expanded(&alpha, &x);
            prop_assert!((direct - expanded).abs() <= 1e-12 * direct.abs().max(1.0));
        }

        #[test]
        fn concave_along_segments(
            alpha in prop::collection::vec(0.5f64..3.0, 1..6),
            seed in any::<u64>(),
            t in 0.01f64..0.99,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = alpha.len();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let beta: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            for u in [paired(&alpha), UtilitySpec::ExpPlusAggregate { alpha: alpha.clone(), beta, p: 2.0 }] {
                prop_assert!(u.value(&mid) >= t * u.value(&x) + (1.0 - t) * u.value(&y) - 1e-10);
            }
        }

        #[test]
        fn strictly_increasing_in_each_coordinate(
            alpha in prop::collection::vec(0.5f64..3.0, 1..6),
            seed in any::<u64>(),
            eps in 1e-3f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = alpha.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
            let u = paired(&alpha);
            for j in 0..alpha.len() {
                let mut xp = x.clone();
                xp[j] += eps;
                prop_assert!(u.value(&xp) > u.value(&x));
            }
        }

        #[test]
        fn fenchel_young_equality_on_diagonal(
            alpha in prop::collection::vec(0.5f64..3.0, 1..8),
            z in 0.05f64..20.0,
        ) {
            let w = vec![z; alpha.len()];
            let grad = grad_v(&alpha, &w).unwrap();
            let x: Vec<f64> = grad.iter().map(|g| -g).collect();
            let lhs = paired(&alpha).value(&x);
            let v = conjugate_v(&alpha, &w).unwrap();
            let rhs = v - grad.iter().map(|g| z * g).sum::<f64>();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }
    }
}
