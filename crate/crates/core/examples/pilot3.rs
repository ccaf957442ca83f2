use nalgebra::DVector;
use sdrl_core::dataset::{generate, split, HaltonSampler};
use sdrl_core::fnn::{train, Architecture, ActivationKind, LossMode, LossWeights, Network, TrainOptions, r_squared};
use sdrl_core::models::{allen_cahn_system, AllenCahnConfig};
use sdrl_core::sdre::{linear_gain_at_origin, sdre_solve};
use sdrl_core::simulator::{simulate, ControllerKind};
use std::time::Instant;

fn main() {
    let cfg = AllenCahnConfig::default();
    let sys = allen_cahn_system(&cfg).unwrap();
    let x0 = DVector::from_fn(51, |i, _| { let xi = i as f64 / 50.0; 1.0 + (1.0 - xi) * xi });

    // SDRE closed loop (criterion 5b) and linear K0 (5d)
    let t0 = Instant::now();
    let sdre_traj = simulate(&sys, &ControllerKind::Sdre { refresh_steps: 1, tol: 1e-9 }, &x0, 10.0, 0.01).unwrap();
    println!("sdre: final inf {:.4e}, cost {:.4}, in {:.1?}", sdre_traj.final_state().amax(), sdre_traj.total_cost(), t0.elapsed());
    let k0 = linear_gain_at_origin(&sys, 1e-9).unwrap();
    match simulate(&sys, &ControllerKind::LinearK0(k0), &x0, 10.0, 0.01) {
        Ok(t) => println!("linear_k0: final inf {:.4e}, cost {:.4}", t.final_state().amax(), t.total_cost()),
        Err(e) => println!("linear_k0: FAILED {e}"),
    }

    // Control signal magnitude along the SDRE trajectory (sampled)
    let tube: Vec<DVector<f64>> = sdre_traj.states.iter().step_by(20).cloned().collect();
    println!("tube has {} sampled states", tube.len());

    // Train u_theta (test-2 config: 4x500 relu, 50 epochs) and simulate
    let sampler = HaltonSampler::new(51);
    let states = sampler.sample_states(1000, sys.domain_lower(), sys.domain_upper()).unwrap();
    let ds = generate(&sys, &states, 1e-9, 1, None);
    let (train_set, val_set) = split(&ds, 0.8, 17).unwrap();
    let arch = Architecture::uniform(51, 500, 4, 1, ActivationKind::Relu).unwrap();
    let opts = TrainOptions {
        loss_mode: LossMode::DirectControl,
        weights: LossWeights { mu_v: 1.0, mu_dv: 0.0 },
        epochs: 50, batch_size: 100, lbfgs_memory: 10, steps_per_batch: 10, seed: 1,
    };
    let t1 = Instant::now();
    let result = train(Network::init(arch, 1), &train_set.records, &val_set.records, &opts).unwrap();
    let best_r2 = result.history.iter().filter_map(|e| e.val_r2).fold(f64::NEG_INFINITY, f64::max);
    println!("u_theta trained in {:.0?}, best val r2 {:.4}", t1.elapsed(), best_r2);
    let net = result.network;
    // u_theta on the tube vs SDRE pointwise law
    let tube_preds: Vec<DVector<f64>> = tube.iter().map(|x| net.forward(x).unwrap()).collect();
    let tube_targets: Vec<DVector<f64>> = tube.iter().map(|x| sdre_solve(&sys, x, 1e-9).unwrap().u).collect();
    println!("u_theta tube r2: {:.4}", r_squared(&tube_preds, &tube_targets).unwrap());
    println!("u_theta(x0) = {:.4} (SDRE {:.4})", net.forward(&x0).unwrap()[0], tube_targets[0][0]);
    match simulate(&sys, &ControllerKind::NnDirect(net), &x0, 10.0, 0.01) {
        Ok(t) => println!("u_theta sim: final inf {:.4e}, cost {:.4}", t.final_state().amax(), t.total_cost()),
        Err(e) => println!("u_theta sim FAILED: {e}"),
    }
}
