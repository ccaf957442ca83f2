use nalgebra::{DMatrix, DVector};
use sdrl_core::dataset::{generate, split, HaltonSampler};
use sdrl_core::fnn::{train, Architecture, ActivationKind, LossMode, LossWeights, Network, TrainOptions, r_squared};
use sdrl_core::models::{allen_cahn_system, AllenCahnConfig, SemilinearSystem};
use sdrl_core::sdre::{linear_gain_at_origin};
use sdrl_core::simulator::{simulate, ControllerKind};
use std::time::Instant;

/// Allen-Cahn system with identity state weight instead of h-scaled.
fn ac_identity_q() -> SemilinearSystem {
    let cfg = AllenCahnConfig::default();
    let base = allen_cahn_system(&cfg).unwrap();
    SemilinearSystem::new(
        "allen_cahn_qi", 51, 1,
        { let c = cfg.clone(); Box::new(move |x: &DVector<f64>| allen_cahn_system(&c).unwrap().eval_a(x)) },
        { let c = cfg.clone(); Box::new(move |x: &DVector<f64>| allen_cahn_system(&c).unwrap().eval_b(x)) },
        DMatrix::identity(51, 51),
        base.r().clone(),
        base.domain_lower().clone(),
        base.domain_upper().clone(),
    ).unwrap()
}

fn main() {
    let sys = ac_identity_q();
    let x0 = DVector::from_fn(51, |i, _| { let xi = i as f64 / 50.0; 1.0 + (1.0 - xi) * xi });

    let k0 = linear_gain_at_origin(&sys, 1e-9).unwrap();
    println!("K0 norm: {:.3}", k0.norm());
    match simulate(&sys, &ControllerKind::LinearK0(k0), &x0, 10.0, 0.01) {
        Ok(t) => println!("K0(Q=I): final inf {:.4e}, cost {:.2}", t.final_state().amax(), t.total_cost()),
        Err(e) => println!("K0(Q=I): FAILED {e}"),
    }
    let t0 = Instant::now();
    match simulate(&sys, &ControllerKind::Sdre { refresh_steps: 1, tol: 1e-9 }, &x0, 10.0, 0.01) {
        Ok(t) => println!("SDRE(Q=I): final inf {:.4e}, cost {:.2} in {:.0?}", t.final_state().amax(), t.total_cost(), t0.elapsed()),
        Err(e) => println!("SDRE(Q=I): FAILED {e}"),
    }

    // dataset + V-net under Q=I
    let sampler = HaltonSampler::new(51);
    let states = sampler.sample_states(1000, sys.domain_lower(), sys.domain_upper()).unwrap();
    let ds = generate(&sys, &states, 1e-9, 1, None);
    println!("dataset: {} records ({} discarded)", ds.len(), ds.meta.discarded);
    let vmax = ds.records.iter().map(|r| r.v).fold(0.0, f64::max);
    let ustd = {
        let us: Vec<f64> = ds.records.iter().map(|r| r.u[0]).collect();
        let m = us.iter().sum::<f64>() / us.len() as f64;
        (us.iter().map(|u| (u - m) * (u - m)).sum::<f64>() / us.len() as f64).sqrt()
    };
    println!("V max {:.3}, u std {:.3}", vmax, ustd);
    let (train_set, val_set) = split(&ds, 0.8, 17).unwrap();

    let arch = Architecture::uniform(51, 500, 3, 1, ActivationKind::Relu).unwrap();
    let opts = TrainOptions {
        loss_mode: LossMode::ValueGradient,
        weights: LossWeights { mu_v: 0.9, mu_dv: 7.0 },
        epochs: 41, batch_size: 100, lbfgs_memory: 10, steps_per_batch: 10, seed: 1, wolfe: true,
    };
    let t1 = Instant::now();
    let result = train(Network::init(arch, 1), &train_set.records, &val_set.records, &opts).unwrap();
    let best_r2 = result.history.iter().filter_map(|e| e.val_r2).fold(f64::NEG_INFINITY, f64::max);
    println!("V-net (wolfe) trained in {:.0?}, best r2(dV) {:.4}", t1.elapsed(), best_r2);
    let net = result.network;
    let b = sys.eval_b(&DVector::zeros(51));
    let r = sys.r().clone();
    let uv_preds: Vec<DVector<f64>> = val_set.records.iter().map(|rec| net.feedback_from_value(&b, &r, &rec.x).unwrap()).collect();
    let u_t: Vec<DVector<f64>> = val_set.records.iter().map(|rec| rec.u.clone()).collect();
    println!("u_V val r2 = {:.5}", r_squared(&uv_preds, &u_t).unwrap());
    println!("u_V(x0) = {:.3}", net.feedback_from_value(&b, &r, &x0).unwrap()[0]);
    match simulate(&sys, &ControllerKind::NnValue { net, b, r }, &x0, 10.0, 0.01) {
        Ok(t) => println!("u_V(Q=I) sim: final inf {:.4e}, cost {:.2}", t.final_state().amax(), t.total_cost()),
        Err(e) => println!("u_V(Q=I) sim FAILED: {e}"),
    }
}
