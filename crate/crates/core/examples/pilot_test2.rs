use nalgebra::DVector;
use sdrl_core::dataset::{generate, split, HaltonSampler};
use sdrl_core::fnn::{train, Architecture, ActivationKind, LossMode, LossWeights, Network, TrainOptions, r_squared, r_squared_scalar};
use sdrl_core::models::{allen_cahn_system, AllenCahnConfig};
use sdrl_core::simulator::{simulate, ControllerKind};
use std::time::Instant;

fn main() {
    let cfg = AllenCahnConfig::default();
    let sys = allen_cahn_system(&cfg).unwrap();
    let sampler = HaltonSampler::new(51);
    let states = sampler.sample_states(1000, sys.domain_lower(), sys.domain_upper()).unwrap();
    let ds = generate(&sys, &states, 1e-9, 1, None);
    let (train_set, val_set) = split(&ds, 0.8, 17).unwrap();
    let b = sys.eval_b(&DVector::zeros(51));
    let r = sys.r().clone();
    let x0 = DVector::from_fn(51, |i, _| { let xi = i as f64 / 50.0; 1.0 + (1.0 - xi) * xi });
    let arch = Architecture::uniform(51, 500, 3, 1, ActivationKind::Relu).unwrap();

    for (label, batch_size, steps, epochs) in [
        ("b100 s10 e71", 100usize, 10usize, 71usize),
        ("b100 s25 e71", 100, 25, 71),
    ] {
        let net = Network::init(arch.clone(), 1);
        let opts = TrainOptions {
            loss_mode: LossMode::ValueGradient,
            weights: LossWeights { mu_v: 0.9, mu_dv: 7.0 },
            epochs, batch_size, lbfgs_memory: 10, steps_per_batch: steps, seed: 1,
        };
        let t1 = Instant::now();
        let result = train(net, &train_set.records, &val_set.records, &opts).unwrap();
        let best_r2 = result.history.iter().filter_map(|e| e.val_r2).fold(f64::NEG_INFINITY, f64::max);
        println!("[{label}] {:.0?}: best epoch {:?}, best r2(dV) {:.4}", t1.elapsed(), result.best_epoch, best_r2);
        let net = result.network;
        let xs: Vec<DVector<f64>> = val_set.records.iter().map(|rec| rec.x.clone()).collect();
        let v_preds: Vec<f64> = net.forward_many(&xs).unwrap().iter().map(|p| p[0]).collect();
        let v_t: Vec<f64> = val_set.records.iter().map(|rec| rec.v).collect();
        let uv_preds: Vec<DVector<f64>> = xs.iter().map(|x| net.feedback_from_value(&b, &r, x).unwrap()).collect();
        let u_t: Vec<DVector<f64>> = val_set.records.iter().map(|rec| rec.u.clone()).collect();
        println!("  val r2: V {:.4}, u_V {:.4}", r_squared_scalar(&v_preds, &v_t).unwrap(), r_squared(&uv_preds, &u_t).unwrap());
        let u0 = net.feedback_from_value(&b, &r, &x0).unwrap();
        println!("  u_V(x0) = {:.4} (SDRE -2.4964)", u0[0]);
        match simulate(&sys, &ControllerKind::NnValue { net, b: b.clone(), r: r.clone() }, &x0, 10.0, 0.01) {
            Ok(t) => println!("  sim: final inf {:.4}, cost {:.4}", t.final_state().amax(), t.total_cost()),
            Err(e) => println!("  sim FAILED: {e}"),
        }
    }
}
