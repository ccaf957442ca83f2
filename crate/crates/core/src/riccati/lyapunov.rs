//! Dense continuous-time Lyapunov solver `A^T X + X A + Q = 0` by reduction
//! to real Schur form and block back-substitution.

use nalgebra::DMatrix;

use super::schur::real_schur;
use super::RiccatiError;

/// Solve `A^T X + X A + Q = 0` for symmetric `Q`.
///
/// Fails with [`RiccatiError::SingularSylvester`] when `A` has a pair of
/// eigenvalues summing to zero, which makes the equation singular.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(RiccatiError::DimensionMismatch(format!(
            "Lyapunov: A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    let (u, t) = real_schur(a.clone())?;
    // A = U T U^T turns the equation into T^T Y + Y T = -Q~ with Y = U^T X U.
    let q_t = u.transpose() * q * &u;
    let y = solve_quasi_sylvester(&t, &(-q_t))?;
    let x = &u * y * u.transpose();
    Ok(0.5 * (&x + x.transpose()))
}

/// Solve `T^T Y + Y T = C` for quasi upper triangular `T`, block by block.
fn solve_quasi_sylvester(t: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            blocks.push((i, 2usize));
            i += 2;
        } else {
            blocks.push((i, 1usize));
            i += 1;
        }
    }

    let scale = t.norm().max(1.0);
    let mut y = DMatrix::<f64>::zeros(n, n);
    for &(j0, js) in &blocks {
        for &(i0, is) in &blocks {
            // RHS = C_IJ - sum_{K<I} T_KI^T Y_KJ - sum_{L<J} Y_IL T_LJ
            let mut rhs = c.view((i0, j0), (is, js)).into_owned();
            if i0 > 0 {
                let t_ki = t.view((0, i0), (i0, is));
                let y_kj = y.view((0, j0), (i0, js));
                rhs -= t_ki.transpose() * y_kj;
            }
            if j0 > 0 {
                let y_il = y.view((i0, 0), (is, j0));
                let t_lj = t.view((0, j0), (j0, js));
                rhs -= y_il * t_lj;
            }

            // T_II^T Y_IJ + Y_IJ T_JJ = RHS as a Kronecker system.
            let t_ii = t.view((i0, i0), (is, is)).into_owned();
            let t_jj = t.view((j0, j0), (js, js)).into_owned();
            let dim = is * js;
            let mut kron = DMatrix::<f64>::zeros(dim, dim);
            for col in 0..js {
                for row in 0..is {
                    let eq = col * is + row;
                    for k in 0..is {
                        kron[(eq, col * is + k)] += t_ii[(k, row)];
                    }
                    for l in 0..js {
                        kron[(eq, l * is + row)] += t_jj[(l, col)];
                    }
                }
            }
            let lu = kron.full_piv_lu();
            let pivot_min = (0..dim)
                .map(|k| lu.u()[(k, k)].abs())
                .fold(f64::INFINITY, f64::min);
            if !pivot_min.is_finite() || pivot_min <= 1e-13 * scale {
                return Err(RiccatiError::SingularSylvester);
            }
            let mut rhs_vec = DMatrix::<f64>::zeros(dim, 1);
            for col in 0..js {
                for row in 0..is {
                    rhs_vec[(col * is + row, 0)] = rhs[(row, col)];
                }
            }
            let sol = lu
                .solve(&rhs_vec)
                .ok_or(RiccatiError::SingularSylvester)?;
            for col in 0..js {
                for row in 0..is {
                    y[(i0 + row, j0 + col)] = sol[(col * is + row, 0)];
                }
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::Prng;

    fn lyap_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
        (a.transpose() * x + x * a + q).norm()
    }

    #[test]
    fn scalar_case() {
        // -2x + 2 = 0 => x = 1
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = DMatrix::from_element(1, 1, 2.0);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_case() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0]));
        let q = DMatrix::identity(2, 2);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert!((x[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((x[(1, 1)] - 0.25).abs() < 1e-14);
        assert!(x[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn random_stable_system_has_tiny_residual_and_psd_solution() {
        let mut rng = Prng::seeded(11);
        for _ in 0..10 {
            let n = 5;
            let m = DMatrix::from_fn(n, n, |_, _| rng.normal());
            // A = -(M M^T) - I is stable by construction.
            let a = -(&m * m.transpose()) - DMatrix::<f64>::identity(n, n);
            let c = DMatrix::from_fn(n, n, |_, _| rng.normal());
            let q = &c * c.transpose();
            let x = solve_lyapunov(&a, &q).unwrap();
            let rel = lyap_residual(&a, &q, &x) / q.norm().max(1.0);
            assert!(rel < 1e-10, "residual {rel}");
            let eigs = x.symmetric_eigen().eigenvalues;
            assert!(eigs.iter().all(|&l| l > -1e-10), "X not PSD: {eigs:?}");
        }
    }

    #[test]
    fn complex_spectrum_system() {
        // Rotation plus damping gives complex eigenvalue pairs, exercising
        // the 2x2 block path.
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                -0.5, 2.0, 0.0, 0.3, //
                -2.0, -0.5, 0.1, 0.0, //
                0.0, 0.0, -1.0, 5.0, //
                0.2, 0.0, -5.0, -1.0,
            ],
        );
        let q = DMatrix::identity(4, 4);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert!(lyap_residual(&a, &q, &x) < 1e-11);
    }

    #[test]
    fn eigenvalue_sum_zero_is_rejected() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        let q = DMatrix::identity(2, 2);
        match solve_lyapunov(&a, &q) {
            Err(RiccatiError::SingularSylvester) => {}
            other => panic!("expected SingularSylvester, got {other:?}"),
        }
    }
}
