use nalgebra::DVector;
use sdrl_core::dataset::{generate, split};
use sdrl_core::fnn::{train, Architecture, ActivationKind, LossMode, LossWeights, Network, TrainOptions, r_squared};
use sdrl_core::models::{allen_cahn_system, AllenCahnConfig};
use sdrl_core::simulator::{simulate, ControllerKind};

fn main() {
    // Evidence run: train the value surrogate on states collected along
    // SDRE trajectories (tube data) instead of box samples, then simulate.
    let sys = allen_cahn_system(&AllenCahnConfig::default()).unwrap();
    let x0 = DVector::from_fn(51, |i, _| { let xi = i as f64 / 50.0; 1.0 + (1.0 - xi) * xi });

    // Collect tube states from a few scaled starting profiles.
    let mut states = Vec::new();
    for scale in [1.0, 0.75, 0.5, 0.25, -0.5, -1.0] {
        let start = &x0 * scale;
        if let Ok(t) = simulate(&sys, &ControllerKind::Sdre { refresh_steps: 1, tol: 1e-9 }, &start, 10.0, 0.01) {
            for (k, s) in t.states.iter().enumerate() {
                if k % 6 == 0 { states.push(s.clone()); }
            }
        }
    }
    println!("tube states: {}", states.len());
    let ds = generate(&sys, &states, 1e-9, 1, None);
    println!("tube dataset: {} records ({} discarded)", ds.len(), ds.meta.discarded);
    let (tr, va) = split(&ds, 0.8, 17).unwrap();
    let arch = Architecture::uniform(51, 500, 3, 1, ActivationKind::Relu).unwrap();
    let opts = TrainOptions {
        loss_mode: LossMode::ValueGradient,
        weights: LossWeights { mu_v: 0.9, mu_dv: 7.0 },
        epochs: 30, batch_size: 100, lbfgs_memory: 10, steps_per_batch: 10, seed: 1, wolfe: true,
    };
    let res = train(Network::init(arch, 1), &tr.records, &va.records, &opts).unwrap();
    let best = res.history.iter().filter_map(|e| e.val_r2).fold(f64::NEG_INFINITY, f64::max);
    let net = res.network;
    let b = sys.eval_b(&DVector::zeros(51));
    let r = sys.r().clone();
    let uv: Vec<DVector<f64>> = va.records.iter().map(|rec| net.feedback_from_value(&b, &r, &rec.x).unwrap()).collect();
    let ut: Vec<DVector<f64>> = va.records.iter().map(|rec| rec.u.clone()).collect();
    println!("tube-trained: r2(dV) {best:.4}, r2(uV) {:.4}, u_V(x0) = {:.3}", r_squared(&uv, &ut).unwrap(), net.feedback_from_value(&b, &r, &x0).unwrap()[0]);
    match simulate(&sys, &ControllerKind::NnValue { net, b, r }, &x0, 10.0, 0.01) {
        Ok(t) => println!("tube-trained u_V sim: final inf {:.4}", t.final_state().amax()),
        Err(e) => println!("tube-trained u_V sim FAILED: {e}"),
    }
}
