use nalgebra::DVector;
use sdrl_core::dataset::{generate, split, HaltonSampler};
use sdrl_core::fnn::{train, Architecture, ActivationKind, LossMode, LossWeights, Network, TrainOptions};
use sdrl_core::models::{cucker_smale_system, CuckerSmaleConfig};
use sdrl_core::simulator::{simulate, ControllerKind};

fn main() {
    let cs = cucker_smale_system(&CuckerSmaleConfig::default()).unwrap();
    let x0 = DVector::from_fn(40, |i, _| 0.4 * (i as f64) / 39.0);
    let sampler = HaltonSampler::new(40);
    let states = sampler.sample_states(1000, cs.domain_lower(), cs.domain_upper()).unwrap();
    let ds = generate(&cs, &states, 1e-9, 1, None);
    let (tr, va) = split(&ds, 0.8, 17).unwrap();
    let arch = Architecture::uniform(40, 400, 2, 20, ActivationKind::Tanh).unwrap();
    for (ep, mem, sb) in [(40usize, 10usize, 10usize), (40, 20, 10), (60, 10, 15)] {
        for seed in 1..=3u64 {
            let opts = TrainOptions {
                loss_mode: LossMode::DirectControl,
                weights: LossWeights { mu_v: 1.0, mu_dv: 0.0 },
                epochs: ep, batch_size: 100, lbfgs_memory: mem, steps_per_batch: sb, seed, wolfe: true,
            };
            let res = train(Network::init(arch.clone(), seed), &tr.records, &va.records, &opts).unwrap();
            let net = res.network;
            match simulate(&cs, &ControllerKind::NnDirect(net), &x0, 10.0, 0.01) {
                Ok(t) => println!("ep{ep} mem{mem} sb{sb} seed{seed}: ratio {:.4}", t.final_state().norm() / x0.norm()),
                Err(e) => println!("ep{ep} mem{mem} sb{sb} seed{seed}: FAILED {e}"),
            }
        }
    }
}
