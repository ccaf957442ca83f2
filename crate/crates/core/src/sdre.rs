//! Pointwise feedback synthesis: freeze the semilinear operators at a state,
//! solve the resulting Riccati equation, and read off control, value, and
//! value gradient.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::models::SemilinearSystem;
use crate::riccati::{self, LtiData, RiccatiError};

#[derive(Debug, Error)]
pub enum SdreError {
    #[error("state has non-finite entries")]
    NonFiniteState,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
}

/// One pointwise solve: the state, the feedback control `u = -K(x) x`, the
/// quadratic value `V = x^T Pi x`, its gradient `2 Pi x`, and the solver
/// residual. `pi` is retained for callers that need the full matrix.
#[derive(Debug, Clone)]
pub struct SdreSample {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub v: f64,
    pub grad_v: DVector<f64>,
    pub pi: Option<DMatrix<f64>>,
    pub residual: f64,
}

fn frozen_lti(sys: &SemilinearSystem, x: &DVector<f64>) -> Result<LtiData, SdreError> {
    if x.len() != sys.state_dim() {
        return Err(SdreError::DimensionMismatch(format!(
            "state must have length {}, got {}",
            sys.state_dim(),
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SdreError::NonFiniteState);
    }
    Ok(LtiData::new(
        sys.eval_a(x),
        sys.eval_b(x),
        sys.q().clone(),
        sys.r().clone(),
    )?)
}

/// Solve the Riccati equation frozen at `x` and assemble the full sample.
pub fn sdre_solve(
    sys: &SemilinearSystem,
    x: &DVector<f64>,
    tol: f64,
) -> Result<SdreSample, SdreError> {
    let lti = frozen_lti(sys, x)?;
    let sol = riccati::solve_care(&lti, tol)?;
    let u = -(&sol.gain * x);
    let pi_x = &sol.pi * x;
    let v = x.dot(&pi_x);
    let grad_v = 2.0 * pi_x;
    Ok(SdreSample {
        x: x.clone(),
        u,
        v,
        grad_v,
        pi: Some(sol.pi),
        residual: sol.residual,
    })
}

/// Feedback gain `K(x) = R^-1 B(x)^T Pi(x)` at a single state.
pub fn sdre_gain(
    sys: &SemilinearSystem,
    x: &DVector<f64>,
    tol: f64,
) -> Result<DMatrix<f64>, SdreError> {
    let lti = frozen_lti(sys, x)?;
    Ok(riccati::solve_care(&lti, tol)?.gain)
}

/// Gain of the linearization frozen at the origin.
pub fn linear_gain_at_origin(sys: &SemilinearSystem, tol: f64) -> Result<DMatrix<f64>, SdreError> {
    let origin = DVector::zeros(sys.state_dim());
    sdre_gain(sys, &origin, tol)
}
