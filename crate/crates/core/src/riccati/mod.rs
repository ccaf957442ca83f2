//! Dense continuous-time algebraic Riccati and Lyapunov solvers with
//! verifiable residuals.
//!
//! The Riccati solver works on the 2n x 2n Hamiltonian matrix
//! `[[A, -B R^-1 B^T], [-Q, -A^T]]`: an ordered real Schur decomposition
//! selects the stable invariant subspace, and Newton-Kleinman steps (each a
//! Lyapunov solve on the closed loop) polish the result until the residual
//! meets the requested tolerance.

mod lyapunov;
mod schur;

pub use lyapunov::solve_lyapunov;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RiccatiError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid cost weights: {0}")]
    InvalidWeights(String),
    #[error("no stabilizing solution: {0}")]
    NotStabilizable(String),
    #[error("solver failed to converge: {0}")]
    NoConvergence(String),
    #[error("Lyapunov/Sylvester equation is singular (eigenvalue sum near zero)")]
    SingularSylvester,
}

/// A linear time-invariant plant with quadratic cost weights.
#[derive(Debug, Clone)]
pub struct LtiData {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LtiData {
    /// Validates dimensions, symmetry of `Q`/`R`, positive semidefiniteness
    /// of `Q` and positive definiteness of `R`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self, RiccatiError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(RiccatiError::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(RiccatiError::DimensionMismatch(format!(
                "B must have {} rows, got {}",
                n,
                b.nrows()
            )));
        }
        let m = b.ncols();
        if q.nrows() != n || q.ncols() != n {
            return Err(RiccatiError::DimensionMismatch(format!(
                "Q must be {n}x{n}, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if r.nrows() != m || r.ncols() != m {
            return Err(RiccatiError::DimensionMismatch(format!(
                "R must be {m}x{m}, got {}x{}",
                r.nrows(),
                r.ncols()
            )));
        }
        let q_asym = (&q - q.transpose()).norm();
        if q_asym > 1e-12 * q.norm().max(1e-300) && q_asym > 0.0 {
            return Err(RiccatiError::InvalidWeights(format!(
                "Q is not symmetric (asymmetry {q_asym:.3e})"
            )));
        }
        let q_min = symmetric_min_eigenvalue(&q);
        if q_min < -1e-10 {
            return Err(RiccatiError::InvalidWeights(format!(
                "Q is not positive semidefinite (min eigenvalue {q_min:.3e})"
            )));
        }
        let r_asym = (&r - r.transpose()).norm();
        if r_asym > 1e-12 * r.norm().max(1e-300) {
            return Err(RiccatiError::InvalidWeights(format!(
                "R is not symmetric (asymmetry {r_asym:.3e})"
            )));
        }
        let r_min = symmetric_min_eigenvalue(&r);
        if r_min <= 0.0 {
            return Err(RiccatiError::InvalidWeights(format!(
                "R is not positive definite (min eigenvalue {r_min:.3e})"
            )));
        }
        Ok(LtiData { a, b, q, r })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Stabilizing solution of the continuous algebraic Riccati equation.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// Symmetric positive semidefinite solution matrix.
    pub pi: DMatrix<f64>,
    /// Feedback gain `K = R^-1 B^T Pi`.
    pub gain: DMatrix<f64>,
    /// Frobenius norm of the Riccati residual at `pi`.
    pub residual: f64,
    /// Largest real part among the eigenvalues of `A - B K`.
    pub closed_loop_abscissa: f64,
}

fn symmetric_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &l| acc.min(l))
}

/// Largest eigenvalue real part, via a bounded Schur iteration. `None` when
/// the iteration fails to converge; callers need a fallback because the QR
/// iteration is not guaranteed to terminate on heavily clustered spectra.
pub(crate) fn spectral_abscissa(m: &DMatrix<f64>) -> Option<f64> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)?;
    let (_, t) = schur.unpack();
    Some(
        schur::quasi_triangular_eigenvalues(&t)
            .iter()
            .fold(f64::NEG_INFINITY, |acc, (re, _)| acc.max(*re)),
    )
}

/// `R^-1 M` through the Cholesky factorization of `R`.
fn r_solve(r: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| RiccatiError::InvalidWeights("R is not positive definite".into()))?;
    Ok(chol.solve(m))
}

/// Frobenius norm of `A^T Pi + Pi A - Pi B R^-1 B^T Pi + Q`.
pub fn care_residual(sys: &LtiData, pi: &DMatrix<f64>) -> Result<f64, RiccatiError> {
    let n = sys.state_dim();
    if pi.nrows() != n || pi.ncols() != n {
        return Err(RiccatiError::DimensionMismatch(format!(
            "Pi must be {n}x{n}, got {}x{}",
            pi.nrows(),
            pi.ncols()
        )));
    }
    let rinv_bt = r_solve(&sys.r, &sys.b.transpose())?;
    let s = &sys.b * rinv_bt;
    let res = sys.a.transpose() * pi + pi * &sys.a - pi * s * pi + &sys.q;
    Ok(res.norm())
}

/// Solve the continuous algebraic Riccati equation
/// `A^T Pi + Pi A - Pi B R^-1 B^T Pi + Q = 0` for its stabilizing solution.
///
/// On success the residual satisfies
/// `residual <= tol * max(1, ||Q||_F)` and the closed loop `A - B K` is
/// Hurwitz.
pub fn solve_care(sys: &LtiData, tol: f64) -> Result<RiccatiSolution, RiccatiError> {
    let n = sys.state_dim();
    let res_scale = sys.q.norm().max(1.0);

    // Hamiltonian H = [[A, -S], [-Q, -A^T]] with S = B R^-1 B^T.
    let rinv_bt = r_solve(&sys.r, &sys.b.transpose())?;
    let s = &sys.b * &rinv_bt;
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&sys.q));
    h.view_mut((n, n), (n, n)).copy_from(&(-sys.a.transpose()));
    let h_norm = h.norm();

    let (mut z, mut t) = schur::real_schur(h)?;

    // Eigenvalues on the imaginary axis mean no stabilizing solution exists.
    let axis_tol = 1e-9 * h_norm;
    let eigs = schur::quasi_triangular_eigenvalues(&t);
    if eigs.iter().any(|(re, _)| re.abs() <= axis_tol) {
        return Err(RiccatiError::NotStabilizable(
            "Hamiltonian has eigenvalues on the imaginary axis".into(),
        ));
    }

    let stable = schur::reorder_stable_first(&mut z, &mut t)?;
    if stable != n {
        return Err(RiccatiError::NotStabilizable(format!(
            "expected {n} stable Hamiltonian eigenvalues, found {stable}"
        )));
    }
    // The stable Hamiltonian spectrum equals the closed-loop spectrum of the
    // stabilizing solution; keep it as a fallback for the abscissa.
    let hamiltonian_abscissa = schur::quasi_triangular_eigenvalues(&t)
        .iter()
        .take(n)
        .fold(f64::NEG_INFINITY, |acc, (re, _)| acc.max(*re));

    // Pi = U2 U1^-1 from the stable invariant subspace basis [U1; U2].
    let u1 = z.view((0, 0), (n, n)).into_owned();
    let u2 = z.view((n, 0), (n, n)).into_owned();
    let lu = u1.transpose().full_piv_lu();
    let pivot_max = (0..n).map(|k| lu.u()[(k, k)].abs()).fold(0.0, f64::max);
    let pivot_min = (0..n)
        .map(|k| lu.u()[(k, k)].abs())
        .fold(f64::INFINITY, f64::min);
    if pivot_min <= 1e-13 * pivot_max.max(1e-300) {
        return Err(RiccatiError::NotStabilizable(
            "stable invariant subspace is not a graph over the state space".into(),
        ));
    }
    let pi_t = lu.solve(&u2.transpose()).ok_or_else(|| {
        RiccatiError::NotStabilizable("stable invariant subspace extraction failed".into())
    })?;
    let mut pi = pi_t.transpose();
    pi = 0.5 * (&pi + pi.transpose());

    // Newton-Kleinman polish in increment form: solve the closed-loop
    // Lyapunov equation for the correction against the current Riccati
    // defect. Stop once the residual is within tolerance or stalls.
    let mut residual = care_residual(sys, &pi)?;
    for _ in 0..10 {
        if residual <= tol * res_scale {
            break;
        }
        let k = r_solve(&sys.r, &(sys.b.transpose() * &pi))?;
        let a_cl = &sys.a - &sys.b * &k;
        let defect = sys.a.transpose() * &pi + &pi * &sys.a - &pi * &s * &pi + &sys.q;
        let delta = match solve_lyapunov(&a_cl, &defect) {
            Ok(x) => x,
            Err(_) => break,
        };
        let refined = {
            let p = &pi + delta;
            0.5 * (&p + p.transpose())
        };
        let refined_residual = care_residual(sys, &refined)?;
        if refined_residual < residual {
            pi = refined;
            residual = refined_residual;
        } else {
            break;
        }
    }

    if residual > tol * res_scale {
        return Err(RiccatiError::NoConvergence(format!(
            "residual {residual:.3e} above tolerance {:.3e}",
            tol * res_scale
        )));
    }

    let gain = r_solve(&sys.r, &(sys.b.transpose() * &pi))?;
    let closed_loop_abscissa =
        spectral_abscissa(&(&sys.a - &sys.b * &gain)).unwrap_or(hamiltonian_abscissa);
    if closed_loop_abscissa >= 0.0 {
        return Err(RiccatiError::NotStabilizable(format!(
            "closed-loop spectral abscissa {closed_loop_abscissa:.3e} is not negative"
        )));
    }

    Ok(RiccatiSolution {
        pi,
        gain,
        residual,
        closed_loop_abscissa,
    })
}
