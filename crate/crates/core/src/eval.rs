//! Error metrics, fair allocations and consistency checks.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Overall relative difference `‖Ê − E‖₁ / ‖E‖₁`. For sample vectors of a
/// random variable the common `1/M` factors cancel, so the same formula gives
/// the ratio of sample L¹ means.
pub fn ord(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), got: estimate.len() });
    }
    let denom: f64 = reference.iter().map(|v| v.abs()).sum();
    if !(denom > 0.0) {
        return Err(Error::ZeroReference);
    }
    let num: f64 = estimate.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum();
    Ok(num / denom)
}

/// ORD of two sample matrices, entrywise.
pub fn ord_matrix(estimate: ArrayView2<f64>, reference: ArrayView2<f64>) -> Result<f64> {
    if estimate.dim() != reference.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", estimate.dim(), reference.dim())));
    }
    let denom: f64 = reference.iter().map(|v| v.abs()).sum();
    if !(denom > 0.0) {
        return Err(Error::ZeroReference);
    }
    let num: f64 = estimate.iter().zip(reference.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(num / denom)
}

/// `ρ^n = mean(Y_n · dQ/dP)` for every agent.
pub fn fair_allocations(y_samples: ArrayView2<f64>, rn_samples: ArrayView1<f64>) -> Result<Vec<f64>> {
    let m = y_samples.nrows();
    if rn_samples.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: rn_samples.len() });
    }
    if m == 0 {
        return Err(Error::Shape("no samples".into()));
    }
    let rn = rn_samples.to_vec();
    let mean_rn = crate::stats::mean(&rn);
    if (mean_rn - 1.0).abs() > 1e-6 {
        return Err(Error::OutsideDomain(format!("density samples have mean {mean_rn}, expected 1")));
    }
    Ok(y_samples.columns().into_iter().map(|col| crate::stats::mean_product(&col.to_vec(), &rn)).collect())
}

/// `|Σ_n ρ^n − ρ|`.
pub fn full_allocation_check(allocations: &[f64], rho_hat: f64) -> f64 {
    (crate::stats::pairwise_sum(allocations) - rho_hat).abs()
}

/// Share of the variance of `rn` explained by a piecewise-constant function of
/// `s` on `n_bins` equal-count bins of `s`, clamped to `[0, 1]`. Constant
/// `rn` or constant `s` count as fully explained.
pub fn sigma_s_score(rn_samples: &[f64], s_values: &[f64], n_bins: usize) -> Result<f64> {
    let m = rn_samples.len();
    if s_values.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: s_values.len() });
    }
    if n_bins < 2 {
        return Err(Error::OutsideDomain("sigma_s_score needs at least 2 bins".into()));
    }
    if m < n_bins {
        return Err(Error::OutsideDomain(format!("{m} samples cannot fill {n_bins} bins")));
    }
    let total = crate::stats::variance(rn_samples);
    let s_spread = s_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - s_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if total <= 0.0 || s_spread <= 0.0 {
        return Ok(1.0);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| s_values[a].total_cmp(&s_values[b]));
    let mut within = 0.0;
    for b in 0..n_bins {
        let lo = b * m / n_bins;
        let hi = (b + 1) * m / n_bins;
        let vals: Vec<f64> = order[lo..hi].iter().map(|&i| rn_samples[i]).collect();
        within += crate::stats::variance(&vals) * vals.len() as f64;
    }
    within /= m as f64;
    Ok((1.0 - within / total).clamp(0.0, 1.0))
}

/// Bin means of `values` over `n_bins` equal-count bins of `s`, as
/// `(mean s, mean value)` pairs sorted by `s`.
pub fn binned_means(values: &[f64], s_values: &[f64], n_bins: usize) -> Result<Vec<(f64, f64)>> {
    let m = values.len();
    if s_values.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: s_values.len() });
    }
    if n_bins == 0 || m < n_bins {
        return Err(Error::OutsideDomain(format!("{m} samples cannot fill {n_bins} bins")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| s_values[a].total_cmp(&s_values[b]));
    Ok((0..n_bins)
        .map(|b| {
            let idx = &order[b * m / n_bins..(b + 1) * m / n_bins];
            let k = idx.len() as f64;
            (idx.iter().map(|&i| s_values[i]).sum::<f64>() / k, idx.iter().map(|&i| values[i]).sum::<f64>() / k)
        })
        .collect())
}

/// Comparison of neural solutions with each other and, when available, with
/// the closed-form reference. Oracle fields are `None` without a reference.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rho_primal: Option<f64>,
    pub rho_dual: Option<f64>,
    pub alpha_dual: Option<f64>,
    pub rho_ref: Option<f64>,
    pub alpha_ref: Option<f64>,
    pub abs_diff_rho: Option<f64>,
    pub abs_diff_rho_dual: Option<f64>,
    pub abs_diff_alpha: Option<f64>,
    pub ord_rn: Option<f64>,
    pub ord_allocations: Option<f64>,
    pub ord_y: Option<f64>,
    pub duality_gap: Option<f64>,
    pub full_allocation_residual: Option<f64>,
    pub sigma_s_score: Option<f64>,
    pub variance_of_sum: Option<f64>,
    pub acceptance_slack: Option<f64>,
    pub fair_allocations_est: Option<Vec<f64>>,
    pub fair_allocations_ref: Option<Vec<f64>>,
}

/// Inputs for [`build_report`]; every part is optional.
#[derive(Default)]
pub struct ReportInputs<'a> {
    pub s_values: Option<&'a [f64]>,
    pub primal: Option<(&'a Array2<f64>, f64, f64, f64)>,
    pub dual: Option<(&'a [f64], f64, f64)>,
    pub reference: Option<&'a crate::analytic::AnalyticSolution>,
}

/// Assembles a [`MetricsReport`]. `primal` is `(Y, ρ̂, Var, slack)`, `dual` is
/// `(dQ/dP samples, ρ̂, α̂)`, all on the same sample as `reference`.
///
/// ORD fields stay `None` when the reference has zero norm.
pub fn build_report(inputs: &ReportInputs<'_>, n_bins: usize) -> Result<MetricsReport> {
    let mut r = MetricsReport::default();
    if let Some((y, rho, var, slack)) = inputs.primal {
        r.rho_primal = Some(rho);
        r.variance_of_sum = Some(var);
        r.acceptance_slack = Some(slack);
        if let Some(reference) = inputs.reference {
            r.abs_diff_rho = Some((rho - reference.rho).abs());
            r.ord_y = defined(ord_matrix(y.view(), reference.y_opt.view()))?;
        }
    }
    if let Some((rn, rho, alpha)) = inputs.dual {
        r.rho_dual = Some(rho);
        r.alpha_dual = Some(alpha);
        if let Some(s) = inputs.s_values {
            r.sigma_s_score = Some(sigma_s_score(rn, s, n_bins)?);
        }
        if let Some(reference) = inputs.reference {
            r.abs_diff_alpha = Some((alpha - reference.penalty_at_optimum).abs());
            r.abs_diff_rho_dual = Some((rho - reference.rho).abs());
            r.ord_rn = defined(ord(rn, reference.rn_derivative.as_slice().unwrap()))?;
        }
    }
    if let Some(reference) = inputs.reference {
        r.rho_ref = Some(reference.rho);
        r.alpha_ref = Some(reference.penalty_at_optimum);
        r.fair_allocations_ref = Some(reference.fair_allocations.clone());
    }
    if let (Some((y, rho_p, _, _)), Some((rn, rho_d, _))) = (inputs.primal, inputs.dual) {
        r.duality_gap = Some((rho_p - rho_d).abs());
        let alloc = fair_allocations(y.view(), ArrayView1::from(rn))?;
        r.full_allocation_residual = Some(full_allocation_check(&alloc, rho_p));
        if let Some(reference) = inputs.reference {
            r.ord_allocations = defined(ord(&alloc, &reference.fair_allocations))?;
        }
        r.fair_allocations_est = Some(alloc);
    }
    Ok(r)
}

fn defined(value: Result<f64>) -> Result<Option<f64>> {
    match value {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroReference) => Ok(None),
        Err(e) => Err(e),
    }
}
