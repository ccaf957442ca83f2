//! File-based pipeline around the core library: dataset generation, network
//! training, held-out evaluation, and closed-loop simulation, each driven by
//! one JSON run configuration.

pub mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use config::{RunConfig, TrainingTarget};
use sdrl_core::dataset::{self, Dataset, DatasetRecord, HaltonSampler};
use sdrl_core::fnn::{
    self, r_squared, r_squared_scalar, Architecture, CheckpointInfo, LossMode, LossWeights,
    Network, TrainOptions, TrainResult,
};
use sdrl_core::models::SemilinearSystem;
use sdrl_core::sdre;
use sdrl_core::simulator::{self, ControllerKind};
use sdrl_core::util::fmt_f64;

/// Generate the training dataset and write `dataset.csv` + `manifest.json`.
pub fn cmd_gen(cfg: &RunConfig) -> anyhow::Result<()> {
    if cfg.sampling.count == 0 {
        bail!("sampling.count must be positive");
    }
    let sys = cfg.build_system()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let start = Instant::now();
    let sampler = HaltonSampler::with_start(sys.state_dim(), cfg.sampling.start_index);
    let states = sampler
        .sample_states(cfg.sampling.count, sys.domain_lower(), sys.domain_upper())
        .map_err(|e| anyhow!("sampling failed: {e}"))?;
    let ds = dataset::generate(
        &sys,
        &states,
        cfg.sampling.tolerance,
        cfg.sampling.start_index,
        Some(cfg.system.clone()),
    );
    dataset::save_with_manifest(&ds, &cfg.dataset_path(), &cfg.manifest_path())
        .map_err(|e| anyhow!("saving dataset failed: {e}"))?;
    println!(
        "generated {} records ({} discarded) for {} in {:.2?}",
        ds.len(),
        ds.meta.discarded,
        sys.name(),
        start.elapsed()
    );
    println!("wrote {}", cfg.dataset_path().display());
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let ds = dataset::load_with_manifest(&cfg.dataset_path(), &cfg.manifest_path())
        .map_err(|e| anyhow!("loading dataset failed: {e}"))?;
    Ok(ds)
}

#[derive(Debug, Serialize)]
struct Metric {
    r2: Option<f64>,
    mse: f64,
}

fn metric(preds: &[DVector<f64>], targets: &[DVector<f64>]) -> anyhow::Result<Metric> {
    let mse = fnn::mse_loss(preds, targets).map_err(|e| anyhow!("mse failed: {e}"))?;
    let r2 = match r_squared(preds, targets) {
        Ok(v) => Some(v),
        Err(fnn::FnnError::DegenerateTargets) => None,
        Err(e) => return Err(anyhow!("r2 failed: {e}")),
    };
    Ok(Metric { r2, mse })
}

/// Per-variable validation metrics in the shape of the paper-style fit
/// tables: value, value gradient, and derived feedback for a value model;
/// the direct feedback for a control model.
fn fit_metrics(
    net: &Network,
    mode: LossMode,
    records: &[DatasetRecord],
    sys: &SemilinearSystem,
) -> anyhow::Result<BTreeMap<String, Metric>> {
    let mut out = BTreeMap::new();
    if records.is_empty() {
        return Ok(out);
    }
    let xs: Vec<DVector<f64>> = records.iter().map(|r| r.x.clone()).collect();
    match mode {
        LossMode::DirectControl => {
            let preds = net.forward_many(&xs)?;
            let targets: Vec<DVector<f64>> = records.iter().map(|r| r.u.clone()).collect();
            out.insert("u_theta".into(), metric(&preds, &targets)?);
        }
        LossMode::ValueGradient => {
            let v_preds: Vec<DVector<f64>> = net
                .forward_many(&xs)?
                .into_iter()
                .collect();
            let v_targets: Vec<DVector<f64>> = records
                .iter()
                .map(|r| DVector::from_element(1, r.v))
                .collect();
            out.insert("value".into(), metric(&v_preds, &v_targets)?);

            let g_preds = net.input_gradient_many(&xs)?;
            let g_targets: Vec<DVector<f64>> = records.iter().map(|r| r.grad_v.clone()).collect();
            out.insert("gradient".into(), metric(&g_preds, &g_targets)?);

            let r = sys.r();
            let u_preds: Vec<DVector<f64>> = records
                .iter()
                .map(|rec| net.feedback_from_value(&sys.eval_b(&rec.x), r, &rec.x))
                .collect::<Result<_, _>>()?;
            let u_targets: Vec<DVector<f64>> = records.iter().map(|r| r.u.clone()).collect();
            out.insert("u_v".into(), metric(&u_preds, &u_targets)?);
        }
    }
    Ok(out)
}

fn write_history_csv(path: &Path, result: &TrainResult) -> anyhow::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,train_loss,val_loss,val_r2")?;
    for e in &result.history {
        writeln!(
            w,
            "{},{},{},{}",
            e.epoch,
            fmt_f64(e.train_loss),
            e.val_loss.map(fmt_f64).unwrap_or_default(),
            e.val_r2.map(fmt_f64).unwrap_or_default()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Train the configured network on the run's dataset; writes `model.ckpt`,
/// `history.csv`, and `train_summary.json`.
pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<()> {
    let sys = cfg.build_system()?;
    let ds = load_dataset(cfg)?;
    let t = &cfg.training;
    let (train_set, val_set) = dataset::split(&ds, t.train_fraction, t.split_seed)
        .map_err(|e| anyhow!("split failed: {e}"))?;

    let (mode, out_dim) = match t.target {
        TrainingTarget::DirectControl => (LossMode::DirectControl, sys.control_dim()),
        TrainingTarget::ValueGradient => (LossMode::ValueGradient, 1),
    };
    let mut sizes = vec![sys.state_dim()];
    sizes.extend_from_slice(&t.hidden);
    sizes.push(out_dim);
    let arch = Architecture::new(sizes, vec![t.activation; t.hidden.len()])
        .map_err(|e| anyhow!("bad architecture: {e}"))?;
    let weights = LossWeights::new(t.mu_v, t.mu_dv).map_err(|e| anyhow!("bad weights: {e}"))?;
    let opts = TrainOptions {
        loss_mode: mode,
        weights,
        epochs: t.epochs,
        batch_size: t.batch_size,
        lbfgs_memory: t.lbfgs_memory,
        steps_per_batch: t.steps_per_batch,
        seed: t.seed,
        wolfe: t.wolfe,
    };

    let start = Instant::now();
    let net = Network::init(arch, t.seed);
    let result = match fnn::train(net, &train_set.records, &val_set.records, &opts) {
        Ok(r) => r,
        Err(fnn::FnnError::NonFiniteLoss { epoch }) => {
            bail!("training diverged: non-finite loss at epoch {epoch}")
        }
        Err(e) => bail!("training failed: {e}"),
    };
    println!(
        "trained {} epochs in {:.2?}, best epoch {:?}",
        t.epochs,
        start.elapsed(),
        result.best_epoch
    );

    std::fs::create_dir_all(&cfg.out_dir)?;
    write_history_csv(&cfg.history_path(), &result)?;
    let info = CheckpointInfo {
        loss_mode: mode,
        mu_v: t.mu_v,
        mu_dv: t.mu_dv,
        seed: t.seed,
    };
    fnn::save_checkpoint(&cfg.checkpoint_path(), &result.network, &info)
        .map_err(|e| anyhow!("saving checkpoint failed: {e}"))?;

    let metrics = fit_metrics(&result.network, mode, &val_set.records, &sys)?;
    for (name, m) in &metrics {
        match m.r2 {
            Some(r2) => println!("  validation {name}: r2 = {r2:.5}, mse = {:.5e}", m.mse),
            None => println!("  validation {name}: r2 degenerate, mse = {:.5e}", m.mse),
        }
    }
    let summary = serde_json::json!({
        "best_epoch": result.best_epoch,
        "validation": metrics,
    });
    std::fs::write(
        cfg.out_dir.join("train_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!("wrote {}", cfg.checkpoint_path().display());
    Ok(())
}

/// Evaluate the checkpoint against fresh pointwise solves on a held-out
/// quasi-random grid; writes `eval.json`.
pub fn cmd_eval(cfg: &RunConfig) -> anyhow::Result<()> {
    let sys = cfg.build_system()?;
    let (net, info) = fnn::load_checkpoint(&cfg.checkpoint_path())
        .map_err(|e| anyhow!("loading checkpoint failed: {e}"))?;
    if net.arch.input_dim() != sys.state_dim() {
        bail!(
            "checkpoint expects {} states, system has {}",
            net.arch.input_dim(),
            sys.state_dim()
        );
    }
    let start_index = cfg
        .evaluation
        .start_index
        .unwrap_or(cfg.sampling.start_index + cfg.sampling.count as u64);
    let sampler = HaltonSampler::with_start(sys.state_dim(), start_index);
    let states = sampler
        .sample_states(cfg.evaluation.count, sys.domain_lower(), sys.domain_upper())
        .map_err(|e| anyhow!("sampling failed: {e}"))?;

    let start = Instant::now();
    let solves: Vec<Option<DatasetRecord>> = states
        .par_iter()
        .map(|x| {
            sdre::sdre_solve(&sys, x, cfg.sampling.tolerance)
                .ok()
                .map(|s| DatasetRecord {
                    x: s.x,
                    u: s.u,
                    v: s.v,
                    grad_v: s.grad_v,
                })
        })
        .collect();
    let records: Vec<DatasetRecord> = solves.into_iter().flatten().collect();
    let discarded = cfg.evaluation.count - records.len();
    println!(
        "evaluation grid: {} states ({} discarded) in {:.2?}",
        records.len(),
        discarded,
        start.elapsed()
    );

    let metrics = fit_metrics(&net, info.loss_mode, &records, &sys)?;
    for (name, m) in &metrics {
        match m.r2 {
            Some(r2) => println!("  test {name}: r2 = {r2:.5}, mse = {:.5e}", m.mse),
            None => println!("  test {name}: r2 degenerate, mse = {:.5e}", m.mse),
        }
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let report = serde_json::json!({
        "count": records.len(),
        "discarded": discarded,
        "start_index": start_index,
        "metrics": metrics,
    });
    std::fs::write(cfg.eval_path(), serde_json::to_string_pretty(&report)?)?;
    println!("wrote {}", cfg.eval_path().display());
    Ok(())
}

fn build_controller(
    name: &str,
    cfg: &RunConfig,
    sys: &SemilinearSystem,
) -> anyhow::Result<ControllerKind> {
    match name {
        "zero" => Ok(ControllerKind::Zero),
        "linear_k0" => {
            let k0 = sdre::linear_gain_at_origin(sys, cfg.simulation.tolerance)
                .map_err(|e| anyhow!("gain at origin failed: {e}"))?;
            Ok(ControllerKind::LinearK0(k0))
        }
        "sdre" => Ok(ControllerKind::Sdre {
            refresh_steps: cfg.simulation.refresh_steps,
            tol: cfg.simulation.tolerance,
        }),
        "nn_direct" => {
            let path = cfg
                .simulation
                .control_checkpoint
                .clone()
                .unwrap_or_else(|| cfg.checkpoint_path());
            let (net, info) =
                fnn::load_checkpoint(&path).map_err(|e| anyhow!("loading {}: {e}", path.display()))?;
            if info.loss_mode != LossMode::DirectControl {
                bail!("{} is not a direct control model", path.display());
            }
            Ok(ControllerKind::NnDirect(net))
        }
        "nn_value" => {
            let path = cfg
                .simulation
                .value_checkpoint
                .clone()
                .unwrap_or_else(|| cfg.checkpoint_path());
            let (net, info) =
                fnn::load_checkpoint(&path).map_err(|e| anyhow!("loading {}: {e}", path.display()))?;
            if info.loss_mode != LossMode::ValueGradient {
                bail!("{} is not a value model", path.display());
            }
            let b = sys.eval_b(&DVector::zeros(sys.state_dim()));
            Ok(ControllerKind::NnValue {
                net,
                b,
                r: sys.r().clone(),
            })
        }
        other => bail!("unknown controller '{other}'"),
    }
}

/// Run every configured controller from the configured start state; writes
/// one `traj_<controller>.csv` per run plus a `costs.csv` comparison table.
pub fn cmd_simulate(cfg: &RunConfig) -> anyhow::Result<()> {
    let sys = cfg.build_system()?;
    let x0 = cfg
        .simulation
        .x0
        .resolve(sys.state_dim())
        .map_err(|e| anyhow!("bad x0: {e}"))?;
    std::fs::create_dir_all(&cfg.out_dir)?;

    let mut rows = Vec::new();
    for name in &cfg.simulation.controllers {
        let controller = build_controller(name, cfg, &sys)?;
        let start = Instant::now();
        match simulator::simulate(&sys, &controller, &x0, cfg.simulation.horizon, cfg.simulation.dt)
        {
            Ok(traj) => {
                let path = cfg.out_dir.join(format!("traj_{name}.csv"));
                simulator::write_trajectory_csv(&traj, &path)?;
                let final_norm = traj.final_state().amax();
                println!(
                    "{name}: final max|x| = {final_norm:.4e}, cost = {:.6}, in {:.2?}",
                    traj.total_cost(),
                    start.elapsed()
                );
                rows.push((name.clone(), Some(traj.total_cost()), Some(final_norm), None));
            }
            Err(simulator::SimError::NonFiniteState { time, .. }) => {
                println!("{name}: diverged at t = {time:.4}");
                rows.push((name.clone(), None, None, Some(time)));
            }
            Err(e) => return Err(anyhow!("{name} simulation failed: {e}")),
        }
    }

    let mut w = std::io::BufWriter::new(std::fs::File::create(cfg.out_dir.join("costs.csv"))?);
    writeln!(w, "controller,total_cost,final_max_abs_state,diverged_at")?;
    for (name, cost, norm, diverged) in rows {
        writeln!(
            w,
            "{name},{},{},{}",
            cost.map(fmt_f64).unwrap_or_default(),
            norm.map(fmt_f64).unwrap_or_default(),
            diverged.map(fmt_f64).unwrap_or_default()
        )?;
    }
    w.flush()?;
    println!("wrote {}", cfg.out_dir.join("costs.csv").display());
    Ok(())
}

/// Quick self-check helper used by tests: r2 of value predictions.
pub fn value_fit_r2(net: &Network, records: &[DatasetRecord]) -> anyhow::Result<f64> {
    let xs: Vec<DVector<f64>> = records.iter().map(|r| r.x.clone()).collect();
    let preds: Vec<f64> = net.forward_many(&xs)?.iter().map(|p| p[0]).collect();
    let targets: Vec<f64> = records.iter().map(|r| r.v).collect();
    Ok(r_squared_scalar(&preds, &targets)?)
}
