//! Batched forward, reverse, and forward-over-reverse passes.
//!
//! States are stored column-wise: a batch of `B` inputs of dimension `n` is
//! an `n x B` matrix, so every layer step is one matrix product. The
//! gradient of the gradient-matching loss term needs second derivatives of
//! the activations; those are propagated exactly by a tangent sweep followed
//! by an adjoint sweep over the augmented (value, tangent) computation.

use nalgebra::{DMatrix, DVector};

use super::{ActivationKind, NetworkParams};

/// sigma(a) applied entry-wise.
fn activate(kind: ActivationKind, a: &mut DMatrix<f64>) {
    match kind {
        ActivationKind::Relu => a.apply(|v| *v = v.max(0.0)),
        ActivationKind::Tanh => a.apply(|v| *v = v.tanh()),
    }
}

/// sigma'(a) computed from the stored post-activation z = sigma(a).
/// For relu the subgradient at zero is fixed to 0.
fn derivative_from_post(kind: ActivationKind, z: &DMatrix<f64>) -> DMatrix<f64> {
    match kind {
        ActivationKind::Relu => z.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        ActivationKind::Tanh => z.map(|v| 1.0 - v * v),
    }
}

/// sigma''(a) from the post-activation; zero almost everywhere for relu.
fn second_derivative_from_post(kind: ActivationKind, z: &DMatrix<f64>) -> DMatrix<f64> {
    match kind {
        ActivationKind::Relu => DMatrix::zeros(z.nrows(), z.ncols()),
        ActivationKind::Tanh => z.map(|v| -2.0 * v * (1.0 - v * v)),
    }
}

/// Post-activation outputs of every layer for one batch; `post[0]` is the
/// input itself and `post[L]` the network output.
pub(crate) struct ForwardPass {
    pub post: Vec<DMatrix<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &DMatrix<f64> {
        self.post.last().expect("forward pass has layers")
    }
}

/// Run the whole batch through the network, keeping per-layer outputs.
pub(crate) fn forward_batch(
    params: &NetworkParams,
    activations: &[ActivationKind],
    x: &DMatrix<f64>,
) -> ForwardPass {
    let layers = params.weights.len();
    let mut post = Vec::with_capacity(layers + 1);
    post.push(x.clone());
    for m in 0..layers {
        let mut a = &params.weights[m] * post.last().unwrap();
        for mut col in a.column_iter_mut() {
            col += &params.biases[m];
        }
        if m + 1 < layers {
            activate(activations[m], &mut a);
        }
        post.push(a);
    }
    ForwardPass { post }
}

/// Input gradients of a scalar-output network, one column per sample.
pub(crate) fn input_gradients_batch(
    params: &NetworkParams,
    activations: &[ActivationKind],
    fp: &ForwardPass,
) -> DMatrix<f64> {
    let layers = params.weights.len();
    let batch = fp.post[0].ncols();
    debug_assert_eq!(params.weights[layers - 1].nrows(), 1);
    // delta at the output of layer m, walked backwards.
    let mut delta = DMatrix::<f64>::from_element(1, batch, 1.0);
    for m in (0..layers).rev() {
        if m + 1 < layers {
            let dz = derivative_from_post(activations[m], &fp.post[m + 1]);
            delta.component_mul_assign(&dz);
        }
        delta = params.weights[m].transpose() * delta;
    }
    delta
}

/// Row vector of per-column sums.
fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::<f64>::zeros(m.nrows());
    for col in m.column_iter() {
        out += col;
    }
    out
}

/// Mean squared error over the batch plus its parameter gradient, for a
/// plain vector-valued regression target.
pub(crate) fn mse_loss_and_grad(
    params: &NetworkParams,
    activations: &[ActivationKind],
    x: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    want_grad: bool,
) -> (f64, Option<NetworkParams>) {
    let layers = params.weights.len();
    let batch = x.ncols() as f64;
    let fp = forward_batch(params, activations, x);
    let diff = fp.output() - targets;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / batch;
    if !want_grad {
        return (loss, None);
    }

    let mut grads = NetworkParams::zeros_like(params);
    let mut delta = diff * (2.0 / batch);
    for m in (0..layers).rev() {
        if m + 1 < layers {
            let dz = derivative_from_post(activations[m], &fp.post[m + 1]);
            delta.component_mul_assign(&dz);
        }
        grads.weights[m] = &delta * fp.post[m].transpose();
        grads.biases[m] = row_sums(&delta);
        if m > 0 {
            delta = params.weights[m].transpose() * delta;
        }
    }
    (loss, Some(grads))
}

/// Weighted value + input-gradient loss for a scalar-output network:
/// `mu_v * MSE(values) + mu_dv * MSE(input gradients)`, with an exact
/// parameter gradient when requested.
///
/// The gradient of the gradient-matching term is computed by seeding a
/// tangent sweep with the residual direction `r = 2 mu_dv (g - g_t) / B`
/// (so the tangent output is exactly that term's derivative) and then
/// running an adjoint sweep over both the value and tangent states.
#[allow(clippy::too_many_arguments)]
pub(crate) fn value_grad_loss_and_grad(
    params: &NetworkParams,
    activations: &[ActivationKind],
    x: &DMatrix<f64>,
    v_targets: &DMatrix<f64>,
    g_targets: &DMatrix<f64>,
    mu_v: f64,
    mu_dv: f64,
    want_grad: bool,
) -> (f64, Option<NetworkParams>) {
    let layers = params.weights.len();
    let batch = x.ncols() as f64;
    let fp = forward_batch(params, activations, x);
    let v_diff = fp.output() - v_targets;
    let g = input_gradients_batch(params, activations, &fp);
    let g_diff = &g - g_targets;
    let loss = mu_v * v_diff.iter().map(|v| v * v).sum::<f64>() / batch
        + mu_dv * g_diff.iter().map(|v| v * v).sum::<f64>() / batch;
    if !want_grad {
        return (loss, None);
    }

    // Tangent sweep seeded with the gradient-term residual.
    let r_dir = g_diff * (2.0 * mu_dv / batch);
    let mut post_dot: Vec<DMatrix<f64>> = Vec::with_capacity(layers + 1);
    post_dot.push(r_dir);
    for m in 0..layers {
        let mut a_dot = &params.weights[m] * post_dot.last().unwrap();
        if m + 1 < layers {
            let dz = derivative_from_post(activations[m], &fp.post[m + 1]);
            a_dot.component_mul_assign(&dz);
        }
        post_dot.push(a_dot);
    }

    // Adjoint sweep over (value, tangent) states.
    let mut grads = NetworkParams::zeros_like(params);
    let mut u = v_diff * (2.0 * mu_v / batch);
    let mut w = DMatrix::<f64>::from_element(1, x.ncols(), 1.0);
    for m in (0..layers).rev() {
        let (alpha, beta) = if m + 1 < layers {
            let dz = derivative_from_post(activations[m], &fp.post[m + 1]);
            let mut alpha = dz.component_mul(&u);
            if activations[m] != ActivationKind::Relu {
                // Second-derivative term needs the unmasked tangent
                // pre-activation; recompute it as W * z_dot. Relu has zero
                // curvature almost everywhere, so the term drops out.
                let d2z = second_derivative_from_post(activations[m], &fp.post[m + 1]);
                let a_dot = &params.weights[m] * &post_dot[m];
                alpha += d2z.component_mul(&a_dot).component_mul(&w);
            }
            let beta = dz.component_mul(&w);
            (alpha, beta)
        } else {
            (u.clone(), w.clone())
        };
        grads.weights[m] = &alpha * fp.post[m].transpose() + &beta * post_dot[m].transpose();
        grads.biases[m] = row_sums(&alpha);
        if m > 0 {
            u = params.weights[m].transpose() * alpha;
            w = params.weights[m].transpose() * beta;
        }
    }
    (loss, Some(grads))
}
