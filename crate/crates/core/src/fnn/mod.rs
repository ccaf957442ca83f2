//! Feedforward networks with exact reverse-mode parameter gradients, exact
//! input gradients, a gradient-augmented training loss, an L-BFGS trainer,
//! and fit metrics.

mod autodiff;
mod lbfgs;

pub use lbfgs::{train, EpochStats, TrainOptions, TrainResult};

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetRecord;
use crate::util::Prng;

#[derive(Debug, Error)]
pub enum FnnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("training set is empty")]
    EmptySet,
    #[error("targets are degenerate (fewer than 2 samples or zero variance)")]
    DegenerateTargets,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Tanh,
}

/// Layer sizes `[n_in, h_1, ..., h_k, n_out]` plus one activation per hidden
/// layer; the output layer is always linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<ActivationKind>,
}

impl Architecture {
    pub fn new(
        layer_sizes: Vec<usize>,
        activations: Vec<ActivationKind>,
    ) -> Result<Self, FnnError> {
        if layer_sizes.len() < 3 {
            return Err(FnnError::InvalidArchitecture(
                "need at least one hidden layer".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(FnnError::InvalidArchitecture(
                "layer sizes must be positive".into(),
            ));
        }
        if activations.len() != layer_sizes.len() - 2 {
            return Err(FnnError::InvalidArchitecture(format!(
                "expected {} activations, got {}",
                layer_sizes.len() - 2,
                activations.len()
            )));
        }
        Ok(Architecture {
            layer_sizes,
            activations,
        })
    }

    /// Uniform hidden width and a single activation kind.
    pub fn uniform(
        n_in: usize,
        hidden: usize,
        depth: usize,
        n_out: usize,
        activation: ActivationKind,
    ) -> Result<Self, FnnError> {
        let mut sizes = Vec::with_capacity(depth + 2);
        sizes.push(n_in);
        sizes.extend(std::iter::repeat(hidden).take(depth));
        sizes.push(n_out);
        Architecture::new(sizes, vec![activation; depth])
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Weight matrices and bias vectors in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl NetworkParams {
    pub(crate) fn zeros_like(other: &NetworkParams) -> Self {
        NetworkParams {
            weights: other
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            biases: other.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flatten into one vector (column-major per weight matrix, biases
    /// appended after each layer's weights).
    pub(crate) fn to_flat(&self) -> DVector<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            flat.extend_from_slice(w.as_slice());
            flat.extend_from_slice(b.as_slice());
        }
        DVector::from_vec(flat)
    }

    pub(crate) fn assign_from_flat(&mut self, flat: &DVector<f64>) {
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let wlen = w.len();
            w.as_mut_slice().copy_from_slice(&flat.as_slice()[offset..offset + wlen]);
            offset += wlen;
            let blen = b.len();
            b.as_mut_slice().copy_from_slice(&flat.as_slice()[offset..offset + blen]);
            offset += blen;
        }
        debug_assert_eq!(offset, flat.len());
    }
}

/// Weights of the two terms in the gradient-augmented loss.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub mu_v: f64,
    pub mu_dv: f64,
}

impl LossWeights {
    pub fn new(mu_v: f64, mu_dv: f64) -> Result<Self, FnnError> {
        if mu_v < 0.0 || mu_dv < 0.0 || (mu_v == 0.0 && mu_dv == 0.0) {
            return Err(FnnError::InvalidArchitecture(
                "loss weights must be nonnegative and not both zero".into(),
            ));
        }
        Ok(LossWeights { mu_v, mu_dv })
    }
}

/// What the network is a surrogate for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Vector-valued feedback `u(x)` fit with plain mean squared error.
    DirectControl,
    /// Scalar value `V(x)` fit with the weighted value + gradient loss.
    ValueGradient,
}

/// A network and the activation schedule needed to evaluate it.
#[derive(Debug, Clone)]
pub struct Network {
    pub arch: Architecture,
    pub params: NetworkParams,
}

/// Glorot-uniform weights (`+-sqrt(6 / (fan_in + fan_out))`), zero biases,
/// drawn deterministically from the seed, layer by layer in row-major order.
pub fn init_params(arch: &Architecture, seed: u64) -> NetworkParams {
    let mut rng = Prng::seeded(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in arch.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut mat = DMatrix::<f64>::zeros(fan_out, fan_in);
        for i in 0..fan_out {
            for j in 0..fan_in {
                mat[(i, j)] = rng.uniform_in(-bound, bound);
            }
        }
        weights.push(mat);
        biases.push(DVector::zeros(fan_out));
    }
    NetworkParams { weights, biases }
}

impl Network {
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let params = init_params(&arch, seed);
        Network { arch, params }
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<(), FnnError> {
        if x.len() != self.arch.input_dim() {
            return Err(FnnError::DimensionMismatch(format!(
                "input must have length {}, got {}",
                self.arch.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Evaluate the network at one input.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>, FnnError> {
        self.check_input(x)?;
        let batch = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let fp = autodiff::forward_batch(&self.params, &self.arch.activations, &batch);
        Ok(DVector::from_column_slice(fp.output().as_slice()))
    }

    /// Evaluate the network on many inputs at once (column per sample).
    pub fn forward_many(&self, xs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>, FnnError> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        for x in xs {
            self.check_input(x)?;
        }
        let batch = columns_to_matrix(xs);
        let fp = autodiff::forward_batch(&self.params, &self.arch.activations, &batch);
        let out = fp.output();
        Ok((0..out.ncols())
            .map(|j| DVector::from_column_slice(out.column(j).as_slice()))
            .collect())
    }

    /// Exact gradient of a scalar-output network with respect to its input.
    pub fn input_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, FnnError> {
        self.check_input(x)?;
        if self.arch.output_dim() != 1 {
            return Err(FnnError::DimensionMismatch(
                "input_gradient needs a scalar-output network".into(),
            ));
        }
        let batch = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let fp = autodiff::forward_batch(&self.params, &self.arch.activations, &batch);
        let g = autodiff::input_gradients_batch(&self.params, &self.arch.activations, &fp);
        Ok(DVector::from_column_slice(g.as_slice()))
    }

    /// Input gradients for many inputs at once (column per sample).
    pub fn input_gradient_many(&self, xs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>, FnnError> {
        if self.arch.output_dim() != 1 {
            return Err(FnnError::DimensionMismatch(
                "input_gradient needs a scalar-output network".into(),
            ));
        }
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        for x in xs {
            self.check_input(x)?;
        }
        let batch = columns_to_matrix(xs);
        let fp = autodiff::forward_batch(&self.params, &self.arch.activations, &batch);
        let g = autodiff::input_gradients_batch(&self.params, &self.arch.activations, &fp);
        Ok((0..g.ncols())
            .map(|j| DVector::from_column_slice(g.column(j).as_slice()))
            .collect())
    }

    /// Jacobian of a vector-output network: rows are output components,
    /// assembled from one reverse sweep per output.
    pub fn input_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, FnnError> {
        self.check_input(x)?;
        let n_out = self.arch.output_dim();
        let n_in = self.arch.input_dim();
        let batch = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let fp = autodiff::forward_batch(&self.params, &self.arch.activations, &batch);
        let layers = self.params.weights.len();
        let mut jac = DMatrix::<f64>::zeros(n_out, n_in);
        for out in 0..n_out {
            let mut delta = DMatrix::<f64>::zeros(n_out, 1);
            delta[(out, 0)] = 1.0;
            for m in (0..layers).rev() {
                if m + 1 < layers {
                    let z = &fp.post[m + 1];
                    let dz = match self.arch.activations[m] {
                        ActivationKind::Relu => z.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                        ActivationKind::Tanh => z.map(|v| 1.0 - v * v),
                    };
                    delta.component_mul_assign(&dz);
                }
                delta = self.params.weights[m].transpose() * delta;
            }
            jac.row_mut(out).copy_from(&delta.transpose());
        }
        Ok(jac)
    }

    /// Feedback read off a value surrogate: `u = -1/2 R^-1 B^T grad V(x)`.
    pub fn feedback_from_value(
        &self,
        b: &DMatrix<f64>,
        r: &DMatrix<f64>,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>, FnnError> {
        if b.nrows() != self.arch.input_dim() || r.nrows() != b.ncols() || r.ncols() != b.ncols() {
            return Err(FnnError::DimensionMismatch(format!(
                "B must be {}xm and R mxm, got B {}x{} R {}x{}",
                self.arch.input_dim(),
                b.nrows(),
                b.ncols(),
                r.nrows(),
                r.ncols()
            )));
        }
        let g = self.input_gradient(x)?;
        let chol = r
            .clone()
            .cholesky()
            .ok_or_else(|| FnnError::DimensionMismatch("R must be positive definite".into()))?;
        Ok(-0.5 * chol.solve(&(b.transpose() * g)))
    }
}

pub(crate) fn columns_to_matrix(xs: &[DVector<f64>]) -> DMatrix<f64> {
    let n = xs[0].len();
    DMatrix::from_fn(n, xs.len(), |i, j| xs[j][i])
}

/// Mean over samples of the squared Euclidean prediction error.
pub fn mse_loss(preds: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<f64, FnnError> {
    if preds.is_empty() {
        return Err(FnnError::EmptyBatch);
    }
    if preds.len() != targets.len() {
        return Err(FnnError::DimensionMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets.iter()) {
        if p.len() != t.len() {
            return Err(FnnError::DimensionMismatch(
                "prediction/target length mismatch".into(),
            ));
        }
        total += (p - t).norm_squared();
    }
    Ok(total / preds.len() as f64)
}

/// The weighted value + gradient loss of a scalar-output network on a batch
/// of records carrying `(x, V, grad V)` targets.
pub fn grad_aug_loss(
    net: &Network,
    batch: &[DatasetRecord],
    weights: &LossWeights,
) -> Result<f64, FnnError> {
    let (x, v_t, g_t) = record_value_batches(net, batch)?;
    let (loss, _) = autodiff::value_grad_loss_and_grad(
        &net.params,
        &net.arch.activations,
        &x,
        &v_t,
        &g_t,
        weights.mu_v,
        weights.mu_dv,
        false,
    );
    Ok(loss)
}

/// Exact gradient of the selected loss with respect to every weight and
/// bias. In `ValueGradient` mode the gradient-matching term is
/// differentiated through the input-gradient computation itself.
pub fn loss_param_gradient(
    net: &Network,
    batch: &[DatasetRecord],
    mode: LossMode,
    weights: &LossWeights,
) -> Result<(f64, NetworkParams), FnnError> {
    match mode {
        LossMode::DirectControl => {
            let (x, u_t) = record_control_batches(net, batch)?;
            let (loss, grads) = autodiff::mse_loss_and_grad(
                &net.params,
                &net.arch.activations,
                &x,
                &u_t,
                true,
            );
            Ok((loss, grads.unwrap()))
        }
        LossMode::ValueGradient => {
            if weights.mu_dv == 0.0 {
                // Pure value fitting: identical to plain MSE backprop on V.
                let (x, v_t, _) = record_value_batches(net, batch)?;
                let (loss, grads) = autodiff::mse_loss_and_grad(
                    &net.params,
                    &net.arch.activations,
                    &x,
                    &v_t,
                    true,
                );
                return Ok((weights.mu_v * loss, scale_params(grads.unwrap(), weights.mu_v)));
            }
            let (x, v_t, g_t) = record_value_batches(net, batch)?;
            let (loss, grads) = autodiff::value_grad_loss_and_grad(
                &net.params,
                &net.arch.activations,
                &x,
                &v_t,
                &g_t,
                weights.mu_v,
                weights.mu_dv,
                true,
            );
            Ok((loss, grads.unwrap()))
        }
    }
}

fn scale_params(mut p: NetworkParams, c: f64) -> NetworkParams {
    for w in &mut p.weights {
        *w *= c;
    }
    for b in &mut p.biases {
        *b *= c;
    }
    p
}

pub(crate) fn record_control_batches(
    net: &Network,
    batch: &[DatasetRecord],
) -> Result<(DMatrix<f64>, DMatrix<f64>), FnnError> {
    if batch.is_empty() {
        return Err(FnnError::EmptyBatch);
    }
    let n = net.arch.input_dim();
    let m = net.arch.output_dim();
    for rec in batch {
        if rec.x.len() != n || rec.u.len() != m {
            return Err(FnnError::DimensionMismatch(
                "record does not match network shape".into(),
            ));
        }
    }
    let x = DMatrix::from_fn(n, batch.len(), |i, j| batch[j].x[i]);
    let u = DMatrix::from_fn(m, batch.len(), |i, j| batch[j].u[i]);
    Ok((x, u))
}

pub(crate) fn record_value_batches(
    net: &Network,
    batch: &[DatasetRecord],
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), FnnError> {
    if batch.is_empty() {
        return Err(FnnError::EmptyBatch);
    }
    if net.arch.output_dim() != 1 {
        return Err(FnnError::DimensionMismatch(
            "value fitting needs a scalar-output network".into(),
        ));
    }
    let n = net.arch.input_dim();
    for rec in batch {
        if rec.x.len() != n || rec.grad_v.len() != n {
            return Err(FnnError::DimensionMismatch(
                "record does not match network shape".into(),
            ));
        }
    }
    let x = DMatrix::from_fn(n, batch.len(), |i, j| batch[j].x[i]);
    let v = DMatrix::from_fn(1, batch.len(), |_, j| batch[j].v);
    let g = DMatrix::from_fn(n, batch.len(), |i, j| batch[j].grad_v[i]);
    Ok((x, v, g))
}

/// Coefficient of determination: `1 - SS_res / SS_tot` with the total sum
/// of squares taken around the componentwise target mean.
pub fn r_squared(preds: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<f64, FnnError> {
    if preds.len() != targets.len() {
        return Err(FnnError::DimensionMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if targets.len() < 2 {
        return Err(FnnError::DegenerateTargets);
    }
    let dim = targets[0].len();
    let mut mean = DVector::<f64>::zeros(dim);
    for t in targets {
        mean += t;
    }
    mean /= targets.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (p, t) in preds.iter().zip(targets.iter()) {
        ss_res += (t - p).norm_squared();
        ss_tot += (t - &mean).norm_squared();
    }
    if ss_tot <= 0.0 {
        return Err(FnnError::DegenerateTargets);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Scalar convenience wrapper for [`r_squared`].
pub fn r_squared_scalar(preds: &[f64], targets: &[f64]) -> Result<f64, FnnError> {
    let p: Vec<DVector<f64>> = preds.iter().map(|&v| DVector::from_element(1, v)).collect();
    let t: Vec<DVector<f64>> = targets
        .iter()
        .map(|&v| DVector::from_element(1, v))
        .collect();
    r_squared(&p, &t)
}

/// Checkpoint provenance stored in the JSON header.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointInfo {
    pub loss_mode: LossMode,
    pub mu_v: f64,
    pub mu_dv: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    layer_sizes: Vec<usize>,
    activations: Vec<ActivationKind>,
    info: CheckpointInfo,
    param_count: usize,
}

/// Save as one JSON header line followed by the raw little-endian `f64`
/// parameters, row-major per weight matrix, each layer's bias after its
/// weights. Round-trips bit-exactly.
pub fn save_checkpoint(
    path: &Path,
    net: &Network,
    info: &CheckpointInfo,
) -> Result<(), FnnError> {
    let header = CheckpointHeader {
        layer_sizes: net.arch.layer_sizes.clone(),
        activations: net.arch.activations.clone(),
        info: info.clone(),
        param_count: net.params.param_count(),
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header_json =
        serde_json::to_string(&header).map_err(|e| FnnError::Format(e.to_string()))?;
    writeln!(file, "{header_json}")?;
    for (w, b) in net.params.weights.iter().zip(net.params.biases.iter()) {
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                file.write_all(&w[(i, j)].to_le_bytes())?;
            }
        }
        for v in b.iter() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointInfo), FnnError> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header_line = String::new();
    {
        use std::io::BufRead;
        file.read_line(&mut header_line)?;
    }
    let header: CheckpointHeader =
        serde_json::from_str(header_line.trim_end()).map_err(|e| FnnError::Format(e.to_string()))?;
    let arch = Architecture::new(header.layer_sizes, header.activations)
        .map_err(|e| FnnError::Format(e.to_string()))?;
    if header.param_count != arch.param_count() {
        return Err(FnnError::Format(format!(
            "parameter count {} does not match architecture ({})",
            header.param_count,
            arch.param_count()
        )));
    }
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * header.param_count {
        return Err(FnnError::Format(format!(
            "expected {} parameter bytes, found {}",
            8 * header.param_count,
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in arch.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let mut mat = DMatrix::<f64>::zeros(fan_out, fan_in);
        for i in 0..fan_out {
            for j in 0..fan_in {
                mat[(i, j)] = values.next().unwrap();
            }
        }
        let mut bias = DVector::<f64>::zeros(fan_out);
        for i in 0..fan_out {
            bias[i] = values.next().unwrap();
        }
        weights.push(mat);
        biases.push(bias);
    }
    Ok((
        Network {
            arch,
            params: NetworkParams { weights, biases },
        },
        header.info,
    ))
}
