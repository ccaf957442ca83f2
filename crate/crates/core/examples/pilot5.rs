use nalgebra::DVector;
use sdrl_core::dataset::{generate, split, HaltonSampler};
use sdrl_core::fnn::{train, Architecture, ActivationKind, LossMode, LossWeights, Network, TrainOptions, r_squared};
use sdrl_core::models::{allen_cahn_system, cucker_smale_system, AllenCahnConfig, CuckerSmaleConfig};
use sdrl_core::simulator::{simulate, ControllerKind};
use std::time::Instant;

fn main() {
    // ---- Test 1: Cucker-Smale u_theta (criterion 7) ----
    let cs = cucker_smale_system(&CuckerSmaleConfig::default()).unwrap();
    let x0cs = DVector::from_fn(40, |i, _| 0.4 * ((i % 20) as f64) / 19.0);
    let t0 = Instant::now();
    match simulate(&cs, &ControllerKind::Sdre { refresh_steps: 1, tol: 1e-9 }, &x0cs, 10.0, 0.01) {
        Ok(t) => println!("CS sdre: |x(10)|/|x0| = {:.4} in {:.0?}", t.final_state().norm() / x0cs.norm(), t0.elapsed()),
        Err(e) => println!("CS sdre FAILED: {e}"),
    }
    let sampler = HaltonSampler::new(40);
    let states = sampler.sample_states(1000, cs.domain_lower(), cs.domain_upper()).unwrap();
    let t0 = Instant::now();
    let ds = generate(&cs, &states, 1e-9, 1, None);
    println!("CS dataset: {} records ({} discarded) in {:.0?}", ds.len(), ds.meta.discarded, t0.elapsed());
    let (tr, va) = split(&ds, 0.8, 17).unwrap();
    let arch = Architecture::uniform(40, 400, 2, 20, ActivationKind::Tanh).unwrap();
    let opts = TrainOptions {
        loss_mode: LossMode::DirectControl,
        weights: LossWeights { mu_v: 1.0, mu_dv: 0.0 },
        epochs: 20, batch_size: 100, lbfgs_memory: 10, steps_per_batch: 10, seed: 1, wolfe: true,
    };
    let t1 = Instant::now();
    let res = train(Network::init(arch, 1), &tr.records, &va.records, &opts).unwrap();
    let best = res.history.iter().filter_map(|e| e.val_r2).fold(f64::NEG_INFINITY, f64::max);
    println!("CS u_theta trained in {:.0?}, best val r2 {:.4}", t1.elapsed(), best);
    let net = res.network;
    match simulate(&cs, &ControllerKind::NnDirect(net), &x0cs, 10.0, 0.01) {
        Ok(t) => println!("CS u_theta: |x(10)|/|x0| = {:.4}", t.final_state().norm() / x0cs.norm()),
        Err(e) => println!("CS u_theta FAILED: {e}"),
    }

    // ---- Test 2: V-net with Wolfe, 71 epochs, 5 seeds ----
    let sys = allen_cahn_system(&AllenCahnConfig::default()).unwrap();
    let sampler = HaltonSampler::new(51);
    let states = sampler.sample_states(1000, sys.domain_lower(), sys.domain_upper()).unwrap();
    let ds = generate(&sys, &states, 1e-9, 1, None);
    let (tr, va) = split(&ds, 0.8, 17).unwrap();
    let x0 = DVector::from_fn(51, |i, _| { let xi = i as f64 / 50.0; 1.0 + (1.0 - xi) * xi });
    let b = sys.eval_b(&DVector::zeros(51));
    let r = sys.r().clone();
    let arch = Architecture::uniform(51, 500, 3, 1, ActivationKind::Relu).unwrap();
    for seed in 1..=5u64 {
        let opts = TrainOptions {
            loss_mode: LossMode::ValueGradient,
            weights: LossWeights { mu_v: 0.9, mu_dv: 7.0 },
            epochs: 71, batch_size: 100, lbfgs_memory: 10, steps_per_batch: 10, seed, wolfe: true,
        };
        let t1 = Instant::now();
        let res = train(Network::init(arch.clone(), seed), &tr.records, &va.records, &opts).unwrap();
        let best = res.history.iter().filter_map(|e| e.val_r2).fold(f64::NEG_INFINITY, f64::max);
        let net = res.network;
        let uv: Vec<DVector<f64>> = va.records.iter().map(|rec| net.feedback_from_value(&b, &r, &rec.x).unwrap()).collect();
        let ut: Vec<DVector<f64>> = va.records.iter().map(|rec| rec.u.clone()).collect();
        let uv_r2 = r_squared(&uv, &ut).unwrap();
        let sim = simulate(&sys, &ControllerKind::NnValue { net, b: b.clone(), r: r.clone() }, &x0, 10.0, 0.01);
        match sim {
            Ok(t) => println!("T2 seed {seed}: r2(dV) {best:.4}, r2(uV) {uv_r2:.4}, sim final {:.4} ({:.0?})", t.final_state().amax(), t1.elapsed()),
            Err(e) => println!("T2 seed {seed}: r2(dV) {best:.4}, r2(uV) {uv_r2:.4}, sim FAILED {e} ({:.0?})", t1.elapsed()),
        }
    }
}
