use nalgebra::DVector;
use sdrl_core::dataset::DatasetRecord;
use sdrl_core::fnn::{grad_aug_loss, loss_param_gradient, Architecture, ActivationKind, LossMode, LossWeights, Network};
use sdrl_core::util::Prng;

fn main() {
    // FD check of the value-gradient loss gradient for a RELU net (off kinks).
    let mut rng = Prng::seeded(7);
    let arch = Architecture::new(vec![4, 10, 8, 1], vec![ActivationKind::Relu; 2]).unwrap();
    let records: Vec<DatasetRecord> = (0..6).map(|_| DatasetRecord {
        x: DVector::from_fn(4, |_, _| rng.uniform_in(-1.5, 1.5)),
        u: DVector::zeros(1),
        v: rng.uniform_in(-1.0, 1.0),
        grad_v: DVector::from_fn(4, |_, _| rng.uniform_in(-1.0, 1.0)),
    }).collect();
    let weights = LossWeights { mu_v: 0.9, mu_dv: 7.0 };
    for seed in [1u64, 2, 3] {
        let net = Network::init(arch.clone(), seed);
        let (_, grads) = loss_param_gradient(&net, &records, LossMode::ValueGradient, &weights).unwrap();
        let flat = grads_to_flat(&grads);
        let theta0 = params_flat(&net);
        let h = 1e-6;
        let mut fd = vec![0.0; theta0.len()];
        for i in 0..theta0.len() {
            let mut tp = theta0.clone(); tp[i] += h;
            let mut tm = theta0.clone(); tm[i] -= h;
            fd[i] = (loss_at(&net, &tp, &records, &weights) - loss_at(&net, &tm, &records, &weights)) / (2.0 * h);
        }
        let num = flat.iter().zip(fd.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("relu L1 gradient rel err (seed {seed}): {:.3e}", num / den);
    }
}

fn params_flat(net: &Network) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in net.params.weights.iter().zip(net.params.biases.iter()) {
        out.extend_from_slice(w.as_slice());
        out.extend_from_slice(b.as_slice());
    }
    out
}

fn grads_to_flat(p: &sdrl_core::fnn::NetworkParams) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in p.weights.iter().zip(p.biases.iter()) {
        out.extend_from_slice(w.as_slice());
        out.extend_from_slice(b.as_slice());
    }
    out
}

fn loss_at(net: &Network, theta: &[f64], records: &[DatasetRecord], weights: &LossWeights) -> f64 {
    let mut probe = net.clone();
    let mut offset = 0;
    for (w, b) in probe.params.weights.iter_mut().zip(probe.params.biases.iter_mut()) {
        let wl = w.len();
        w.as_mut_slice().copy_from_slice(&theta[offset..offset + wl]);
        offset += wl;
        let bl = b.len();
        b.as_mut_slice().copy_from_slice(&theta[offset..offset + bl]);
        offset += bl;
    }
    grad_aug_loss(&probe, records, weights).unwrap()
}
