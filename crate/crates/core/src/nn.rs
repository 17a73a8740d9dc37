//! A small fully connected network with hand-written backpropagation.
//!
//! Layers compute `z = a · W + b` with `W` stored as `fan_in × fan_out`, so a
//! batch is an `M × fan_in` matrix and every layer is a single GEMM. The
//! optional [`OutputHead::SoftplusUnitMean`] maps the single output column to
//! `softplus(z_i) / mean_j softplus(z_j)`; since the normalizer couples all
//! rows of the batch, its backward pass is not row-local.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
pub use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Identity,
    SoftplusUnitMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    hidden_activation: Activation,
    output_head: OutputHead,
    input_shift: Array1<f64>,
    input_scale: Array1<f64>,
    /// Optional square matrix applied to the standardised inputs.
    input_mixing: Option<Array2<f64>>,
    rng_seed: u64,
    version: u64,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
pub struct Tape {
    version: u64,
    /// Layer inputs: the normalised batch, then each hidden activation.
    activations: Vec<Array2<f64>>,
    /// Pre-activations of every layer, the last one being the raw output.
    pre_activations: Vec<Array2<f64>>,
    /// Batch mean of the softplus outputs when the unit-mean head is used.
    head_mean: Option<f64>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub loss_value: f64,
}

impl BatchGradients {
    /// Flattened in the same order as [`Mlp::param`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn with_loss(mut self, loss: f64) -> Self {
        self.loss_value = loss;
        self
    }

    pub fn negated(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| -w).collect(),
            biases: self.biases.iter().map(|b| -b).collect(),
            loss_value: -self.loss_value,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Builds a network with uniform He-style initialisation
    /// (`U(−√(6/fan_in), √(6/fan_in))` weights, zero biases).
    pub fn new(layer_sizes: &[usize], hidden_activation: Activation, output_head: OutputHead, rng_seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Shape(format!("layer sizes must have ≥ 2 positive entries, got {layer_sizes:?}")));
        }
        let outputs = *layer_sizes.last().unwrap();
        if output_head == OutputHead::SoftplusUnitMean && outputs != 1 {
            return Err(Error::Shape(format!("unit-mean head needs a single output, got {outputs}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit)));
            biases.push(Array1::zeros(fan_out));
        }
        let inputs = layer_sizes[0];
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_head,
            input_shift: Array1::zeros(inputs),
            input_scale: Array1::ones(inputs),
            input_mixing: None,
            rng_seed,
            version: 0,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn output_head(&self) -> OutputHead {
        self.output_head
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    /// Inputs are mapped to `(x − shift) / scale` before the first layer.
    pub fn set_input_normalization(&mut self, shift: Array1<f64>, scale: Array1<f64>) -> Result<()> {
        let n = self.n_inputs();
        if shift.len() != n || scale.len() != n {
            return Err(Error::Shape(format!("normalisation needs {n} entries")));
        }
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Shape("normalisation scale must be positive".into()));
        }
        self.input_shift = shift;
        self.input_scale = scale;
        self.version += 1;
        Ok(())
    }

    /// Standardised inputs are multiplied on the right by `mixing` (`n_inputs × n_inputs`).
    pub fn set_input_mixing(&mut self, mixing: Option<Array2<f64>>) -> Result<()> {
        let n = self.n_inputs();
        if let Some(m) = &mixing {
            if m.dim() != (n, n) {
                return Err(Error::Shape(format!("input mixing must be {n}x{n}, got {:?}", m.dim())));
            }
        }
        self.input_mixing = mixing;
        self.version += 1;
        Ok(())
    }

    /// Sets the output-layer bias, e.g. to start a solver from a known constant.
    pub fn set_output_bias(&mut self, bias: &[f64]) -> Result<()> {
        let last = self.biases.last_mut().unwrap();
        if bias.len() != last.len() {
            return Err(Error::Shape(format!("output bias needs {} entries", last.len())));
        }
        last.assign(&Array1::from(bias.to_vec()));
        self.version += 1;
        Ok(())
    }

    /// Multiplies the output-layer weights by `factor`.
    pub fn scale_output_weights(&mut self, factor: f64) {
        self.weights.last_mut().unwrap().mapv_inplace(|w| w * factor);
        self.version += 1;
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().zip(&self.biases).map(|(w, b)| w.len() + b.len()).sum()
    }

    fn locate(&self, mut idx: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if idx < w.len() {
                let cols = w.ncols();
                return (l, Some((idx / cols, idx % cols)), 0);
            }
            idx -= w.len();
            if idx < b.len() {
                return (l, None, idx);
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `idx` in layer order: weights row-major, then biases.
    pub fn param(&self, idx: usize) -> f64 {
        match self.locate(idx) {
            (l, Some(rc), _) => self.weights[l][rc],
            (l, None, j) => self.biases[l][j],
        }
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        match self.locate(idx) {
            (l, Some(rc), _) => self.weights[l][rc] = value,
            (l, None, j) => self.biases[l][j] = value,
        }
        self.version += 1;
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.n_inputs() {
            return Err(Error::Shape(format!("batch has {} columns, network expects {}", batch.ncols(), self.n_inputs())));
        }
        if batch.nrows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_with_tape(batch)?.output)
    }

    pub fn forward_with_tape(&self, batch: ArrayView2<f64>) -> Result<Tape> {
        self.check_batch(&batch)?;
        let depth = self.weights.len();
        let mut activations = Vec::with_capacity(depth);
        let mut pre_activations = Vec::with_capacity(depth);
        let mut input = (&batch - &self.input_shift) / &self.input_scale;
        if let Some(m) = &self.input_mixing {
            input = input.dot(m);
        }
        activations.push(input);
        for l in 0..depth {
            let z = activations[l].dot(&self.weights[l]) + &self.biases[l];
            if l + 1 < depth {
                let act = self.hidden_activation;
                activations.push(z.mapv(|v| act.apply(v)));
            }
            pre_activations.push(z);
        }
        let raw = pre_activations.last().unwrap();
        let (output, head_mean) = match self.output_head {
            OutputHead::Identity => (raw.clone(), None),
            OutputHead::SoftplusUnitMean => {
                let sp = raw.mapv(softplus);
                let mean = sp.sum() / sp.len() as f64;
                (sp / mean, Some(mean))
            }
        };
        Ok(Tape { version: self.version, activations, pre_activations, head_mean, output })
    }

    /// Reverse-mode gradients of a scalar loss whose gradient with respect to
    /// the network output is `upstream` (same shape as the output).
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<BatchGradients> {
        if tape.version != self.version {
            return Err(Error::StaleCache);
        }
        if upstream.dim() != tape.output.dim() {
            return Err(Error::Shape(format!("upstream {:?} vs output {:?}", upstream.dim(), tape.output.dim())));
        }
        let depth = self.weights.len();
        let raw = &tape.pre_activations[depth - 1];
        let mut delta = match self.output_head {
            OutputHead::Identity => upstream.to_owned(),
            OutputHead::SoftplusUnitMean => {
                let mean = tape.head_mean.unwrap();
                let m = upstream.len() as f64;
                let coupling = Zip::from(&upstream).and(&tape.output).fold(0.0, |acc, g, o| acc + g * o) / m;
                let mut d = upstream.to_owned();
                Zip::from(&mut d).and(raw).for_each(|d, &z| *d = sigmoid(z) / mean * (*d - coupling));
                d
            }
        };
        let mut weights = vec![Array2::zeros((0, 0)); depth];
        let mut biases = vec![Array1::zeros(0); depth];
        for l in (0..depth).rev() {
            weights[l] = tape.activations[l].t().dot(&delta);
            biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = delta.dot(&self.weights[l].t());
                let act = self.hidden_activation;
                Zip::from(&mut prev).and(&tape.pre_activations[l - 1]).for_each(|g, &z| *g *= act.derivative(z));
                delta = prev;
            }
        }
        Ok(BatchGradients { weights, biases, loss_value: 0.0 })
    }

    pub fn sgd_step(&mut self, grads: &BatchGradients, lr: f64, direction: Direction) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::OutsideDomain(format!("learning rate must be positive, got {lr}")));
        }
        if grads.weights.len() != self.weights.len()
            || grads.weights.iter().zip(&self.weights).any(|(g, w)| g.dim() != w.dim())
            || grads.biases.iter().zip(&self.biases).any(|(g, b)| g.dim() != b.dim())
        {
            return Err(Error::Shape("gradient shapes do not match the network".into()));
        }
        let step = match direction {
            Direction::Descent => -lr,
            Direction::Ascent => lr,
        };
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.scaled_add(step, g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.scaled_add(step, g);
        }
        self.version += 1;
        Ok(())
    }

    /// Moves every parameter a fraction `weight` of the way towards `other`'s.
    /// With `weight = 1/k` at the k-th call this keeps a running average.
    pub fn blend_toward(&mut self, other: &Mlp, weight: f64) -> Result<()> {
        if self.layer_sizes != other.layer_sizes {
            return Err(Error::Shape(format!("cannot blend {:?} with {:?}", self.layer_sizes, other.layer_sizes)));
        }
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            Zip::from(w).and(o).for_each(|a, &b| *a += weight * (b - *a));
        }
        for (w, o) in self.biases.iter_mut().zip(&other.biases) {
            Zip::from(w).and(o).for_each(|a, &b| *a += weight * (b - *a));
        }
        self.version += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            layer_sizes: self.layer_sizes.clone(),
            hidden_activation: self.hidden_activation,
            output_head: self.output_head,
            rng_seed: self.rng_seed,
            input_shift: self.input_shift.to_vec(),
            input_scale: self.input_scale.to_vec(),
            input_mixing: self.input_mixing.as_ref().map(|m| m.iter().copied().collect()),
            weights: self.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let mut net = Mlp::new(&c.layer_sizes, c.hidden_activation, c.output_head, c.rng_seed)?;
        if c.weights.len() != net.weights.len() || c.biases.len() != net.biases.len() {
            return Err(Error::Shape("checkpoint layer count does not match layer_sizes".into()));
        }
        for (l, (w, b)) in c.weights.iter().zip(&c.biases).enumerate() {
            let dim = net.weights[l].dim();
            net.weights[l] = Array2::from_shape_vec(dim, w.clone())
                .map_err(|_| Error::Shape(format!("layer {l} weights need {} values", dim.0 * dim.1)))?;
            if b.len() != net.biases[l].len() {
                return Err(Error::Shape(format!("layer {l} bias needs {} values", net.biases[l].len())));
            }
            net.biases[l] = Array1::from(b.clone());
        }
        net.set_input_normalization(Array1::from(c.input_shift.clone()), Array1::from(c.input_scale.clone()))?;
        if let Some(m) = &c.input_mixing {
            let n = net.n_inputs();
            let m = Array2::from_shape_vec((n, n), m.clone()).map_err(|_| Error::Shape(format!("input mixing needs {} values", n * n)))?;
            net.set_input_mixing(Some(m))?;
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_checkpoint(&serde_json::from_str(text)?)
    }
}

/// Architecture and initialisation shared by the solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    /// Factor applied to the freshly initialised output layer weights.
    pub output_init_scale: f64,
    /// Decorrelate the standardised inputs before the first layer.
    pub input_whitening: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden_layers: vec![64, 64, 64], activation: Activation::Relu, output_init_scale: 0.1, input_whitening: false }
    }
}

impl NetworkConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.hidden_layers.contains(&0) {
            return Err(Error::config(field, "hidden layer widths must be positive"));
        }
        if !(self.output_init_scale >= 0.0 && self.output_init_scale.is_finite()) {
            return Err(Error::config(field, "output_init_scale must be finite and non-negative"));
        }
        Ok(())
    }

    /// Builds a network whose inputs are standardised with the column
    /// statistics of `data`.
    pub fn build(&self, data: ArrayView2<f64>, n_outputs: usize, head: OutputHead, seed: u64) -> Result<Mlp> {
        let mut sizes = vec![data.ncols()];
        sizes.extend(&self.hidden_layers);
        sizes.push(n_outputs);
        let mut net = Mlp::new(&sizes, self.activation, head, seed)?;
        if self.output_init_scale != 1.0 {
            net.scale_output_weights(self.output_init_scale);
        }
        let (shift, scale) = column_standardisation(data);
        if self.input_whitening {
            let standardised = (&data - &shift) / &scale;
            net.set_input_mixing(Some(whitening_matrix(standardised.view())))?;
        }
        net.set_input_normalization(shift, scale)?;
        Ok(net)
    }
}

/// Column means and standard deviations; degenerate columns get scale 1.
pub fn column_standardisation(data: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = data.ncols();
    let mut shift = Array1::zeros(n);
    let mut scale = Array1::ones(n);
    for (j, col) in data.columns().into_iter().enumerate() {
        let v = col.to_vec();
        shift[j] = crate::stats::mean(&v);
        let sd = crate::stats::variance(&v).sqrt();
        if sd > 1e-12 {
            scale[j] = sd;
        }
    }
    (shift, scale)
}

/// Symmetric (ZCA) whitening matrix `V Λ^{-1/2} Vᵀ` of the sample covariance
/// of `data`. Directions with negligible variance are left unscaled.
pub fn whitening_matrix(data: ArrayView2<f64>) -> Array2<f64> {
    let (m, n) = data.dim();
    let mean = data.mean_axis(ndarray::Axis(0)).unwrap_or_else(|| Array1::zeros(n));
    let centred = &data - &mean;
    let cov = centred.t().dot(&centred) / m.max(1) as f64;
    let eig = nalgebra::DMatrix::from_fn(n, n, |i, j| cov[[i, j]]).symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        let lambda = eig.eigenvalues[k];
        let factor = if lambda > 1e-8 * top.max(1e-300) { lambda.sqrt().recip() } else { 1.0 };
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += factor * eig.eigenvectors[(i, k)] * eig.eigenvectors[(j, k)];
            }
        }
    }
    out
}

/// Mini-batch size: a row count, or `"full"` in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSize {
    Rows(usize),
    Full(FullBatch),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FullBatch {
    Full,
}

impl BatchSize {
    pub const FULL: BatchSize = BatchSize::Full(FullBatch::Full);

    pub fn rows(self) -> Option<usize> {
        match self {
            BatchSize::Rows(r) => Some(r),
            BatchSize::Full(_) => None,
        }
    }
}

/// Row index batches for one epoch. `None` means a single full batch;
/// otherwise rows are shuffled with `rng` and cut into chunks.
pub fn epoch_batches(n_rows: usize, batch_size: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    match batch_size {
        Some(b) if b < n_rows => {
            let mut idx: Vec<usize> = (0..n_rows).collect();
            idx.shuffle(rng);
            idx.chunks(b).map(|c| c.to_vec()).collect()
        }
        _ => vec![(0..n_rows).collect()],
    }
}

/// Serialised network: layer shapes plus row-major parameter arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_head: OutputHead,
    pub rng_seed: u64,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_mixing: Option<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}
