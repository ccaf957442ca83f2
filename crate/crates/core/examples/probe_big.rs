use nalgebra::DVector;
use sdrl_core::models::{allen_cahn_system, AllenCahnConfig};
use sdrl_core::simulator::{simulate, ControllerKind};

fn main() {
    let sys = allen_cahn_system(&AllenCahnConfig::default()).unwrap();
    let x0 = DVector::from_fn(51, |i, _| { let xi = i as f64 / 50.0; 1.0 + (1.0 - xi) * xi });
    for dt in [0.01, 0.002, 0.001] {
        match simulate(&sys, &ControllerKind::Zero, &x0, 10.0, dt) {
            Ok(t) => println!("dt={dt}: final max|x-1| = {:.4e}", t.states.last().unwrap().iter().map(|v| (v-1.0).abs()).fold(0.0, f64::max)),
            Err(e) => println!("dt={dt}: FAILED {e}"),
        }
    }
}
