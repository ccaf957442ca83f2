//! Mini-batch L-BFGS trainer: two-loop recursion with backtracking line
//! search, curvature memory reset at batch boundaries, best-validation
//! snapshotting.

use nalgebra::DVector;
use std::collections::VecDeque;

use crate::dataset::DatasetRecord;
use crate::util::Prng;

use super::{loss_param_gradient, r_squared, FnnError, LossMode, LossWeights, Network};

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub loss_mode: LossMode,
    pub weights: LossWeights,
    pub epochs: usize,
    /// Records per mini-batch; anything >= the training-set size means
    /// full-batch optimization (curvature memory then persists across
    /// epochs).
    pub batch_size: usize,
    /// Curvature pairs kept by the two-loop recursion.
    pub lbfgs_memory: usize,
    /// Quasi-Newton iterations spent on each mini-batch per epoch.
    pub steps_per_batch: usize,
    /// Seed for the per-epoch batch shuffle.
    pub seed: u64,
    /// Require the weak Wolfe curvature condition in the line search
    /// (better curvature pairs at the price of one gradient per probe).
    pub wolfe: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            loss_mode: LossMode::DirectControl,
            weights: LossWeights {
                mu_v: 1.0,
                mu_dv: 0.0,
            },
            epochs: 20,
            batch_size: 100,
            lbfgs_memory: 10,
            steps_per_batch: 10,
            seed: 0,
            wolfe: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_r2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub network: Network,
    pub history: Vec<EpochStats>,
    /// Epoch whose snapshot is returned (highest validation r^2), when a
    /// validation score was available at all.
    pub best_epoch: Option<usize>,
}

struct CurvaturePair {
    s: DVector<f64>,
    y: DVector<f64>,
    rho: f64,
}

/// Two-loop recursion for the search direction `-H grad`.
fn lbfgs_direction(grad: &DVector<f64>, memory: &VecDeque<CurvaturePair>) -> DVector<f64> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for pair in memory.iter().rev() {
        let alpha = pair.rho * pair.s.dot(&q);
        q.axpy(-alpha, &pair.y, 1.0);
        alphas.push(alpha);
    }
    if let Some(last) = memory.back() {
        let gamma = last.s.dot(&last.y) / last.y.dot(&last.y);
        q *= gamma;
    }
    for (pair, alpha) in memory.iter().zip(alphas.iter().rev()) {
        let beta = pair.rho * pair.y.dot(&q);
        q.axpy(alpha - beta, &pair.s, 1.0);
    }
    -q
}

/// Loss and flat gradient of the configured objective on one batch.
fn batch_objective(
    net: &mut Network,
    theta: &DVector<f64>,
    batch: &[DatasetRecord],
    mode: LossMode,
    weights: &LossWeights,
) -> Result<(f64, DVector<f64>), FnnError> {
    net.params.assign_from_flat(theta);
    let (loss, grads) = loss_param_gradient(net, batch, mode, weights)?;
    Ok((loss, grads.to_flat()))
}

fn batch_loss_only(
    net: &mut Network,
    theta: &DVector<f64>,
    batch: &[DatasetRecord],
    mode: LossMode,
    weights: &LossWeights,
) -> Result<f64, FnnError> {
    net.params.assign_from_flat(theta);
    match mode {
        LossMode::DirectControl => {
            let (x, u_t) = super::record_control_batches(net, batch)?;
            let (loss, _) = super::autodiff::mse_loss_and_grad(
                &net.params,
                &net.arch.activations,
                &x,
                &u_t,
                false,
            );
            Ok(loss)
        }
        LossMode::ValueGradient => super::grad_aug_loss(net, batch, weights),
    }
}

/// Validation metric used for early stopping: r^2 of the directly fitted
/// quantity (controls in direct mode, value gradients in value mode).
fn validation_r2(
    net: &Network,
    val: &[DatasetRecord],
    mode: LossMode,
) -> Result<Option<f64>, FnnError> {
    if val.len() < 2 {
        return Ok(None);
    }
    let xs: Vec<DVector<f64>> = val.iter().map(|r| r.x.clone()).collect();
    let r2 = match mode {
        LossMode::DirectControl => {
            let preds = net.forward_many(&xs)?;
            let targets: Vec<DVector<f64>> = val.iter().map(|r| r.u.clone()).collect();
            r_squared(&preds, &targets)
        }
        LossMode::ValueGradient => {
            let preds = net.input_gradient_many(&xs)?;
            let targets: Vec<DVector<f64>> = val.iter().map(|r| r.grad_v.clone()).collect();
            r_squared(&preds, &targets)
        }
    };
    match r2 {
        Ok(v) => Ok(Some(v)),
        Err(FnnError::DegenerateTargets) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Sufficient-decrease constant for the backtracking line search.
const ARMIJO_C1: f64 = 1e-4;

/// Curvature constant for the weak Wolfe condition.
const WOLFE_C2: f64 = 0.9;

/// Train with mini-batch L-BFGS and return the best-validation snapshot
/// along with the per-epoch history.
pub fn train(
    mut net: Network,
    train_set: &[DatasetRecord],
    val_set: &[DatasetRecord],
    opts: &TrainOptions,
) -> Result<TrainResult, FnnError> {
    if train_set.is_empty() {
        return Err(FnnError::EmptySet);
    }
    if opts.batch_size == 0 || opts.steps_per_batch == 0 {
        return Err(FnnError::InvalidArchitecture(
            "batch_size and steps_per_batch must be positive".into(),
        ));
    }
    let full_batch = opts.batch_size >= train_set.len();
    let mut rng = Prng::seeded(opts.seed);
    let mut theta = net.params.to_flat();
    let mut memory: VecDeque<CurvaturePair> = VecDeque::with_capacity(opts.lbfgs_memory);
    let mut history = Vec::with_capacity(opts.epochs);
    let mut best: Option<(usize, f64, DVector<f64>)> = None;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch_buf: Vec<DatasetRecord> = Vec::with_capacity(opts.batch_size);

    for epoch in 1..=opts.epochs {
        if !full_batch {
            rng.shuffle(&mut order);
        }
        for chunk in order.chunks(opts.batch_size) {
            batch_buf.clear();
            batch_buf.extend(chunk.iter().map(|&i| train_set[i].clone()));
            // Stale curvature from another batch corrupts the quasi-Newton
            // model; keep memory only within a batch (or across epochs when
            // optimizing the full set).
            if !full_batch {
                memory.clear();
            }

            let (mut loss, mut grad) =
                batch_objective(&mut net, &theta, &batch_buf, opts.loss_mode, &opts.weights)?;
            if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
                return Err(FnnError::NonFiniteLoss { epoch });
            }

            for _ in 0..opts.steps_per_batch {
                let mut dir = lbfgs_direction(&grad, &memory);
                let mut slope = grad.dot(&dir);
                if slope >= 0.0 {
                    memory.clear();
                    dir = -grad.clone();
                    slope = -grad.norm_squared();
                }
                if slope.abs() < 1e-300 {
                    break;
                }

                // Line search: backtrack to sufficient decrease, then (in
                // Wolfe mode) expand while the directional derivative says
                // the step is still too short. Gradients computed along the
                // way are reused for the curvature pair.
                let first_step = if memory.is_empty() {
                    (1.0 / grad.norm().max(1e-12)).min(1.0)
                } else {
                    1.0
                };
                let mut step = first_step;
                let mut accepted: Option<(DVector<f64>, f64, DVector<f64>)> = None;
                for _ in 0..30 {
                    let cand = &theta + step * &dir;
                    let (cand_loss, cand_grad) = batch_objective(
                        &mut net,
                        &cand,
                        &batch_buf,
                        opts.loss_mode,
                        &opts.weights,
                    )?;
                    if cand_loss.is_finite() && cand_loss <= loss + ARMIJO_C1 * step * slope {
                        accepted = Some((cand, cand_loss, cand_grad));
                        break;
                    }
                    step *= 0.5;
                }
                if opts.wolfe {
                    // Weak Wolfe: expand while curvature says the step is
                    // too short and the longer step still decreases enough.
                    let mut expansions = 0;
                    while let Some((_, _, ref g_new)) = accepted {
                        if expansions >= 6 || g_new.dot(&dir) >= WOLFE_C2 * slope {
                            break;
                        }
                        let longer = step * 2.0;
                        let cand = &theta + longer * &dir;
                        let (cand_loss, cand_grad) = batch_objective(
                            &mut net,
                            &cand,
                            &batch_buf,
                            opts.loss_mode,
                            &opts.weights,
                        )?;
                        if cand_loss.is_finite()
                            && cand_loss <= loss + ARMIJO_C1 * longer * slope
                        {
                            step = longer;
                            accepted = Some((cand, cand_loss, cand_grad));
                            expansions += 1;
                        } else {
                            break;
                        }
                    }
                }
                let Some((new_theta, new_loss, new_grad)) = accepted else {
                    break;
                };
                if !new_loss.is_finite() || new_grad.iter().any(|v| !v.is_finite()) {
                    return Err(FnnError::NonFiniteLoss { epoch });
                }
                let s = &new_theta - &theta;
                let y = &new_grad - &grad;
                let sy = s.dot(&y);
                if sy > 1e-10 * s.norm() * y.norm() {
                    if memory.len() == opts.lbfgs_memory {
                        memory.pop_front();
                    }
                    let rho = 1.0 / sy;
                    memory.push_back(CurvaturePair { s, y, rho });
                }
                theta = new_theta;
                loss = new_loss;
                grad = new_grad;
            }
        }

        // Epoch bookkeeping on the final parameters.
        let train_loss =
            batch_loss_only(&mut net, &theta, train_set, opts.loss_mode, &opts.weights)?;
        if !train_loss.is_finite() {
            return Err(FnnError::NonFiniteLoss { epoch });
        }
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(batch_loss_only(
                &mut net,
                &theta,
                val_set,
                opts.loss_mode,
                &opts.weights,
            )?)
        };
        net.params.assign_from_flat(&theta);
        let val_r2 = validation_r2(&net, val_set, opts.loss_mode)?;
        if let Some(r2) = val_r2 {
            let improved = best.as_ref().map(|(_, b, _)| r2 > *b).unwrap_or(true);
            if improved {
                best = Some((epoch, r2, theta.clone()));
            }
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_r2,
        });
    }

    let best_epoch = best.as_ref().map(|(e, _, _)| *e);
    if let Some((_, _, snapshot)) = best {
        net.params.assign_from_flat(&snapshot);
    } else {
        net.params.assign_from_flat(&theta);
    }
    Ok(TrainResult {
        network: net,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fnn::{ActivationKind, Architecture};

    fn line_records(count: usize) -> Vec<DatasetRecord> {
        (0..count)
            .map(|i| {
                let x = -1.0 + 2.0 * (i as f64) / (count - 1) as f64;
                DatasetRecord {
                    x: DVector::from_element(1, x),
                    u: DVector::from_element(1, 3.0 * x),
                    v: 0.0,
                    grad_v: DVector::from_element(1, 0.0),
                }
            })
            .collect()
    }

    #[test]
    fn learns_a_line_quickly() {
        let arch = Architecture::new(vec![1, 8, 1], vec![ActivationKind::Tanh]).unwrap();
        let net = Network::init(arch, 3);
        let records = line_records(64);
        let (train_set, val_set) = records.split_at(48);
        let opts = TrainOptions {
            loss_mode: LossMode::DirectControl,
            epochs: 50,
            batch_size: 48,
            steps_per_batch: 10,
            ..TrainOptions::default()
        };
        let result = train(net, train_set, val_set, &opts).unwrap();
        let best = result
            .history
            .iter()
            .filter_map(|e| e.val_r2)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best >= 0.999, "val r2 only reached {best}");
    }

    #[test]
    fn identical_seeds_give_identical_histories() {
        let arch = Architecture::new(vec![1, 8, 1], vec![ActivationKind::Tanh]).unwrap();
        let records = line_records(40);
        let (train_set, val_set) = records.split_at(30);
        let opts = TrainOptions {
            loss_mode: LossMode::DirectControl,
            epochs: 5,
            batch_size: 10,
            steps_per_batch: 4,
            seed: 11,
            ..TrainOptions::default()
        };
        let run = |seed: u64| {
            let net = Network::init(arch.clone(), seed);
            train(net, train_set, val_set, &opts).unwrap()
        };
        let a = run(5);
        let b = run(5);
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(b.history.iter()) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(
                x.val_loss.map(f64::to_bits),
                y.val_loss.map(f64::to_bits)
            );
            assert_eq!(x.val_r2.map(f64::to_bits), y.val_r2.map(f64::to_bits));
        }
        assert_eq!(a.network.params, b.network.params);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let arch = Architecture::new(vec![1, 4, 1], vec![ActivationKind::Tanh]).unwrap();
        let net = Network::init(arch, 1);
        let opts = TrainOptions::default();
        assert!(matches!(
            train(net, &[], &[], &opts),
            Err(FnnError::EmptySet)
        ));
    }

    #[test]
    fn single_record_trains_without_r2() {
        let arch = Architecture::new(vec![1, 4, 1], vec![ActivationKind::Tanh]).unwrap();
        let net = Network::init(arch, 1);
        let records = line_records(2);
        let opts = TrainOptions {
            epochs: 3,
            ..TrainOptions::default()
        };
        let result = train(net, &records[..1], &records[1..], &opts).unwrap();
        assert!(result.best_epoch.is_none());
        assert!(result.history.iter().all(|e| e.val_r2.is_none()));
    }
}
