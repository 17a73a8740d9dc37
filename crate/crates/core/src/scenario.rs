//! Seeded generation and CSV persistence of risk-factor scenario sets.
//!
//! A [`ScenarioSet`] is an `M × N` matrix: one row per scenario, one column
//! per agent. The per-scenario aggregate `S = Σ_n X^n` is cached alongside.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DistributionKind {
    /// Equicorrelated Gaussian, truncated at `mean ± truncation_sds · stdev`.
    CorrelatedGaussian {
        mean: Vec<f64>,
        pairwise_correlation: f64,
        stdev: Vec<f64>,
        truncation_sds: f64,
    },
    /// `X^n = Z_n + Z_{N+1}` with `N + 1` iid `Beta(a, b)` draws per scenario.
    CommonShockBeta { a: f64, b: f64 },
    /// Base draws shifted per scenario so that the aggregate equals `target_sum`.
    FixedSum {
        base: Box<DistributionKind>,
        target_sum: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub n_agents: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl DistributionSpec {
    /// Equicorrelated Gaussian with identical marginals and ±6 sd truncation.
    pub fn gaussian(n_agents: usize, n_samples: usize, mean: f64, stdev: f64, correlation: f64, seed: u64) -> Self {
        Self {
            kind: DistributionKind::CorrelatedGaussian {
                mean: vec![mean; n_agents],
                pairwise_correlation: correlation,
                stdev: vec![stdev; n_agents],
                truncation_sds: 6.0,
            },
            n_agents,
            n_samples,
            seed,
        }
    }

    pub fn common_shock_beta(n_agents: usize, n_samples: usize, a: f64, b: f64, seed: u64) -> Self {
        Self { kind: DistributionKind::CommonShockBeta { a, b }, n_agents, n_samples, seed }
    }

    /// Wraps `self` so every generated scenario sums to `target_sum`.
    pub fn with_fixed_sum(self, target_sum: f64) -> Self {
        Self {
            kind: DistributionKind::FixedSum { base: Box::new(self.kind), target_sum },
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_samples == 0 {
            return Err(Error::InvalidDistribution(format!(
                "need at least one agent and one sample, got N = {}, M = {}",
                self.n_agents, self.n_samples
            )));
        }
        validate_kind(&self.kind, self.n_agents, false)
    }
}

fn validate_kind(kind: &DistributionKind, n: usize, nested: bool) -> Result<()> {
    match kind {
        DistributionKind::CorrelatedGaussian { mean, pairwise_correlation, stdev, truncation_sds } => {
            if mean.len() != n || stdev.len() != n {
                return Err(Error::InvalidDistribution(format!(
                    "mean and stdev need {n} entries, got {} and {}",
                    mean.len(),
                    stdev.len()
                )));
            }
            if stdev.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidDistribution("mean/stdev must be finite, stdev ≥ 0".into()));
            }
            if !(*truncation_sds > 0.0) {
                return Err(Error::InvalidDistribution("truncation_sds must be positive".into()));
            }
            equicorrelation_cholesky(n, *pairwise_correlation).map(|_| ())
        }
        DistributionKind::CommonShockBeta { a, b } => {
            if !(*a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::InvalidDistribution(format!("Beta parameters must be positive, got ({a}, {b})")));
            }
            Ok(())
        }
        DistributionKind::FixedSum { base, target_sum } => {
            if nested {
                return Err(Error::InvalidDistribution("fixed-sum base cannot itself be fixed-sum".into()));
            }
            if !target_sum.is_finite() {
                return Err(Error::InvalidDistribution("target_sum must be finite".into()));
            }
            validate_kind(base, n, true)
        }
    }
}

/// Lower Cholesky factor of the `n × n` matrix with unit diagonal and constant
/// off-diagonal `r`. Fails when the matrix is not positive definite, i.e.
/// outside `(-1/(n-1), 1)`.
pub fn equicorrelation_cholesky(n: usize, r: f64) -> Result<Array2<f64>> {
    let corr = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { r });
    cholesky(&corr).ok_or_else(|| {
        Error::InvalidDistribution(format!("equicorrelation matrix with r = {r} (N = {n}) is not positive definite"))
    })
}

fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(s > 1e-12) {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    data: Array2<f64>,
    sums: Array1<f64>,
    spec: Option<DistributionSpec>,
}

impl ScenarioSet {
    /// Wraps a raw `M × N` matrix; the aggregate column is computed here.
    pub fn from_matrix(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidDistribution("scenario matrix must be non-empty".into()));
        }
        let sums = data.sum_axis(Axis(1));
        Ok(Self { data, sums, spec: None })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// `S(ω_i) = Σ_n X^n(ω_i)` for every scenario.
    pub fn sums(&self) -> &Array1<f64> {
        &self.sums
    }

    pub fn spec(&self) -> Option<&DistributionSpec> {
        self.spec.as_ref()
    }

    pub fn n_agents(&self) -> usize {
        self.data.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    /// Same scenarios shifted by a deterministic vector `m`.
    pub fn shifted(&self, m: &[f64]) -> Result<Self> {
        if m.len() != self.n_agents() {
            return Err(Error::DimensionMismatch { expected: self.n_agents(), got: m.len() });
        }
        let shift = ArrayView1::from(m);
        let data = &self.data + &shift;
        let mut out = Self::from_matrix(data)?;
        out.spec = None;
        Ok(out)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        let header: Vec<String> = (1..=self.n_agents()).map(|n| format!("agent_{n}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in self.data.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a set written by [`save_csv`](Self::save_csv). When
    /// `expected_agents` is given the header must name exactly that many agents.
    pub fn load_csv(path: impl AsRef<Path>, expected_agents: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let csv_err = |row: usize, msg: String| Error::Csv { path: path.to_path_buf(), row, msg };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(path)
            .map_err(|e| csv_err(0, e.to_string()))?;
        let header = reader.headers().map_err(|e| csv_err(0, e.to_string()))?.clone();
        let n = header.len();
        for (j, name) in header.iter().enumerate() {
            if name.trim() != format!("agent_{}", j + 1) {
                return Err(csv_err(0, format!("expected header agent_{}, found `{name}`", j + 1)));
            }
        }
        if let Some(expected) = expected_agents {
            if expected != n {
                return Err(csv_err(0, format!("header has {n} agents, expected {expected}")));
            }
        }
        let mut values = Vec::new();
        let mut rows = 0usize;
        for (idx, record) in reader.records().enumerate() {
            let row = idx + 1;
            let record = record.map_err(|e| csv_err(row, e.to_string()))?;
            if record.len() != n {
                return Err(csv_err(row, format!("expected {n} columns, found {}", record.len())));
            }
            for cell in record.iter() {
                let v: f64 = cell.trim().parse().map_err(|_| csv_err(row, format!("cannot parse `{cell}`")))?;
                values.push(v);
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(csv_err(1, "no data rows".into()));
        }
        let data = Array2::from_shape_vec((rows, n), values).map_err(|e| csv_err(0, e.to_string()))?;
        Self::from_matrix(data)
    }
}

/// Draws `spec.n_samples` scenarios. The same spec (including seed) always
/// yields a bit-identical matrix.
pub fn generate(spec: &DistributionSpec) -> Result<ScenarioSet> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let data = sample_kind(&spec.kind, spec.n_agents, spec.n_samples, &mut rng)?;
    let mut set = ScenarioSet::from_matrix(data)?;
    set.spec = Some(spec.clone());
    Ok(set)
}

fn sample_kind(kind: &DistributionKind, n: usize, m: usize, rng: &mut ChaCha20Rng) -> Result<Array2<f64>> {
    match kind {
        DistributionKind::CorrelatedGaussian { mean, pairwise_correlation, stdev, truncation_sds } => {
            let chol = equicorrelation_cholesky(n, *pairwise_correlation)?;
            let mut out = Array2::<f64>::zeros((m, n));
            let mut z = vec![0.0; n];
            let mut corr = vec![0.0; n];
            for mut row in out.rows_mut() {
                // Rejection: redraw the whole scenario when any standardized
                // coordinate falls outside the truncation band.
                loop {
                    for zi in z.iter_mut() {
                        *zi = StandardNormal.sample(rng);
                    }
                    for i in 0..n {
                        corr[i] = (0..=i).map(|k| chol[[i, k]] * z[k]).sum();
                    }
                    if corr.iter().all(|c| c.abs() <= *truncation_sds) {
                        break;
                    }
                }
                for i in 0..n {
                    row[i] = mean[i] + stdev[i] * corr[i];
                }
            }
            Ok(out)
        }
        DistributionKind::CommonShockBeta { a, b } => {
            let beta = Beta::new(*a, *b).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            let mut out = Array2::<f64>::zeros((m, n));
            let mut draws = vec![0.0; n + 1];
            for mut row in out.rows_mut() {
                for d in draws.iter_mut() {
                    *d = beta.sample(rng);
                }
                let common = draws[n];
                for i in 0..n {
                    row[i] = draws[i] + common;
                }
            }
            Ok(out)
        }
        DistributionKind::FixedSum { base, target_sum } => {
            let mut out = sample_kind(base, n, m, rng)?;
            for mut row in out.rows_mut() {
                let shift = (target_sum - row.sum()) / n as f64;
                row.mapv_inplace(|x| x + shift);
            }
            Ok(out)
        }
    }
}
