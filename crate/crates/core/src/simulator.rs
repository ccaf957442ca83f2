//! Closed-loop integration of a semilinear system under a selectable
//! controller, with quadratic cost accounting and trajectory export.

use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::fnn::Network;
use crate::models::SemilinearSystem;
use crate::sdre::{self, SdreError};
use crate::util::fmt_f64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("state diverged (max |x| > {guard:.1e}) at t = {time:.4}")]
    NonFiniteState { time: f64, guard: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("controller failed at t = {time:.4}: {source}")]
    Controller { time: f64, source: SdreError },
    #[error("network controller failed: {0}")]
    Net(#[from] crate::fnn::FnnError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Feedback law evaluated along the trajectory.
pub enum ControllerKind {
    /// No control input.
    Zero,
    /// Fixed linear feedback `u = -K0 x`.
    LinearK0(DMatrix<f64>),
    /// Pointwise Riccati feedback: the gain is recomputed every
    /// `refresh_steps` integration steps and held in between; the control
    /// applied each step is `-K x_current`.
    Sdre { refresh_steps: usize, tol: f64 },
    /// Network that outputs the control directly.
    NnDirect(Network),
    /// Value-surrogate network with the feedback layer
    /// `u = -1/2 R^-1 B^T grad V(x)`.
    NnValue {
        net: Network,
        b: DMatrix<f64>,
        r: DMatrix<f64>,
    },
}

impl ControllerKind {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerKind::Zero => "zero",
            ControllerKind::LinearK0(_) => "linear_k0",
            ControllerKind::Sdre { .. } => "sdre",
            ControllerKind::NnDirect(_) => "nn_direct",
            ControllerKind::NnValue { .. } => "nn_value",
        }
    }
}

/// Time grid, state history, per-step held controls, and the running cost.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub cost: Vec<f64>,
    pub controller: String,
    pub dt: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has states")
    }

    pub fn total_cost(&self) -> f64 {
        *self.cost.last().expect("trajectory has cost samples")
    }
}

/// One classical fourth-order Runge-Kutta step of `x' = A(x) x + B(x) u`
/// with the control held constant.
pub fn step_rk4(
    sys: &SemilinearSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>, SimError> {
    if x.len() != sys.state_dim() || u.len() != sys.control_dim() {
        return Err(SimError::DimensionMismatch(format!(
            "state {} / control {} for a ({}, {}) system",
            x.len(),
            u.len(),
            sys.state_dim(),
            sys.control_dim()
        )));
    }
    let rhs = |state: &DVector<f64>| -> DVector<f64> {
        sys.eval_a(state) * state + sys.eval_b(state) * u
    };
    let k1 = rhs(x);
    let k2 = rhs(&(x + (dt / 2.0) * &k1));
    let k3 = rhs(&(x + (dt / 2.0) * &k2));
    let k4 = rhs(&(x + dt * &k3));
    let next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFiniteState {
            time: 0.0,
            guard: f64::INFINITY,
        });
    }
    Ok(next)
}

/// State bound beyond which a run is declared divergent.
const BLOWUP_GUARD: f64 = 1e6;

/// Real-axis extent of the classical Runge-Kutta stability region, with a
/// safety margin.
const RK4_STABILITY_SPAN: f64 = 2.5;

/// Gershgorin bound on the spectral radius of the frozen drift operator,
/// used to keep explicit substeps inside the stability region. Stiff
/// diffusion operators need integration steps far below a natural control
/// sampling interval.
fn stiffness_bound(sys: &SemilinearSystem, x: &DVector<f64>) -> f64 {
    let a = sys.eval_a(x);
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        let row_sum: f64 = (0..a.ncols()).map(|j| a[(i, j)].abs()).sum();
        worst = worst.max(row_sum);
    }
    worst
}

/// Integrate the closed loop from `x0` over `[0, horizon]` with control
/// sampling step `dt`. The controller is evaluated at the current state,
/// held over the step, and the quadratic cost `x^T Q x + u^T R u` is
/// accumulated by the trapezoid rule with the held control on each
/// interval. Each control interval is integrated with as many Runge-Kutta
/// substeps as the frozen operator's stiffness requires.
pub fn simulate(
    sys: &SemilinearSystem,
    controller: &ControllerKind,
    x0: &DVector<f64>,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory, SimError> {
    if x0.len() != sys.state_dim() {
        return Err(SimError::DimensionMismatch(format!(
            "x0 has length {}, system expects {}",
            x0.len(),
            sys.state_dim()
        )));
    }
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(SimError::DimensionMismatch(
            "dt and horizon must be positive".into(),
        ));
    }
    let steps = (horizon / dt).round() as usize;
    let q = sys.q();
    let r = sys.r();

    let mut held_gain: Option<DMatrix<f64>> = None;
    let mut steps_since_refresh = 0usize;

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut cost = Vec::with_capacity(steps + 1);

    let mut x = x0.clone();
    times.push(0.0);
    states.push(x.clone());
    cost.push(0.0);

    for k in 0..steps {
        let t = k as f64 * dt;
        if x.amax() > BLOWUP_GUARD {
            return Err(SimError::NonFiniteState {
                time: t,
                guard: BLOWUP_GUARD,
            });
        }
        let u = match controller {
            ControllerKind::Zero => DVector::zeros(sys.control_dim()),
            ControllerKind::LinearK0(k0) => -(k0 * &x),
            ControllerKind::Sdre { refresh_steps, tol } => {
                let refresh = (*refresh_steps).max(1);
                if held_gain.is_none() || steps_since_refresh >= refresh {
                    let gain = sdre::sdre_gain(sys, &x, *tol)
                        .map_err(|source| SimError::Controller { time: t, source })?;
                    held_gain = Some(gain);
                    steps_since_refresh = 0;
                }
                steps_since_refresh += 1;
                -(held_gain.as_ref().unwrap() * &x)
            }
            ControllerKind::NnDirect(net) => net.forward(&x)?,
            ControllerKind::NnValue { net, b, r } => net.feedback_from_value(b, r, &x)?,
        };

        let substeps = ((dt * stiffness_bound(sys, &x) / RK4_STABILITY_SPAN).ceil() as usize).max(1);
        let sub_dt = dt / substeps as f64;
        let mut next = x.clone();
        for _ in 0..substeps {
            next = step_rk4(sys, &next, &u, sub_dt).map_err(|e| match e {
                SimError::NonFiniteState { .. } => SimError::NonFiniteState {
                    time: t,
                    guard: BLOWUP_GUARD,
                },
                other => other,
            })?;
            if next.amax() > BLOWUP_GUARD {
                return Err(SimError::NonFiniteState {
                    time: t,
                    guard: BLOWUP_GUARD,
                });
            }
        }

        // Trapezoid on x^T Q x with the held control contributing its full
        // weight over the interval.
        let run_now = (q * &x).dot(&x) + (r * &u).dot(&u);
        let run_next = (q * &next).dot(&next) + (r * &u).dot(&u);
        let increment = 0.5 * dt * (run_now + run_next);
        cost.push(cost.last().unwrap() + increment);

        controls.push(u);
        x = next;
        times.push((k + 1) as f64 * dt);
        states.push(x.clone());
    }
    if x.amax() > BLOWUP_GUARD {
        return Err(SimError::NonFiniteState {
            time: horizon,
            guard: BLOWUP_GUARD,
        });
    }

    Ok(Trajectory {
        times,
        states,
        controls,
        cost,
        controller: controller.label().to_string(),
        dt,
    })
}

/// Trapezoid-rule integral of `x^T Q x + u^T R u` over the trajectory,
/// recomputed from the stored states and per-step controls.
pub fn total_cost(
    traj: &Trajectory,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<f64, SimError> {
    let n = traj.states.first().map(|s| s.len()).unwrap_or(0);
    if q.nrows() != n || q.ncols() != n {
        return Err(SimError::DimensionMismatch(format!(
            "Q must be {n}x{n}, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    if traj.states.len() != traj.controls.len() + 1 {
        return Err(SimError::DimensionMismatch(
            "trajectory must hold one control per step".into(),
        ));
    }
    let mut total = 0.0;
    for k in 0..traj.controls.len() {
        let u = &traj.controls[k];
        if r.nrows() != u.len() || r.ncols() != u.len() {
            return Err(SimError::DimensionMismatch(format!(
                "R must be {0}x{0}",
                u.len()
            )));
        }
        let dt = traj.times[k + 1] - traj.times[k];
        let run_now = (q * &traj.states[k]).dot(&traj.states[k]) + (r * u).dot(u);
        let run_next = (q * &traj.states[k + 1]).dot(&traj.states[k + 1]) + (r * u).dot(u);
        total += 0.5 * dt * (run_now + run_next);
    }
    Ok(total)
}

/// Write the trajectory as CSV: `t,x_1..x_n,u_1..u_m,cost`, one row per
/// grid point, the last row repeating the final held control.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<(), SimError> {
    let n = traj.states.first().map(|s| s.len()).unwrap_or(0);
    let m = traj.controls.first().map(|u| u.len()).unwrap_or(0);
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.push("cost".to_string());
    writeln!(w, "{}", header.join(","))?;
    for k in 0..traj.states.len() {
        let u = if k < traj.controls.len() {
            &traj.controls[k]
        } else {
            &traj.controls[traj.controls.len() - 1]
        };
        let mut fields = vec![fmt_f64(traj.times[k])];
        fields.extend(traj.states[k].iter().map(|&v| fmt_f64(v)));
        fields.extend(u.iter().map(|&v| fmt_f64(v)));
        fields.push(fmt_f64(traj.cost[k]));
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}
