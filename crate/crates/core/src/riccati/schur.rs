//! Ordered real Schur decomposition: bring the stable eigenvalues of a real
//! matrix to the leading diagonal blocks by orthogonal similarity swaps.

use nalgebra::DMatrix;

use super::RiccatiError;

/// Real Schur factorization `m = q * t * q^T` with `t` quasi upper
/// triangular.
pub fn real_schur(m: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), RiccatiError> {
    let schur = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 100_000)
        .ok_or_else(|| RiccatiError::NoConvergence("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    Ok((q, t))
}

/// Diagonal block layout of a quasi-triangular matrix: start offset and size
/// (1 or 2) per block.
fn block_sizes(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Real parts of the eigenvalues of a 1x1 or 2x2 diagonal block; for complex
/// pairs both share `trace / 2`.
fn block_real_parts(t: &DMatrix<f64>, start: usize, size: usize) -> (f64, f64) {
    if size == 1 {
        let v = t[(start, start)];
        return (v, v);
    }
    let a = t[(start, start)];
    let b = t[(start, start + 1)];
    let c = t[(start + 1, start)];
    let d = t[(start + 1, start + 1)];
    let mean = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc >= 0.0 {
        let root = disc.sqrt();
        (mean + root, mean - root)
    } else {
        (mean, mean)
    }
}

/// All eigenvalues (re, im) read off the quasi-triangular factor.
pub fn quasi_triangular_eigenvalues(t: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let mut eigs = Vec::with_capacity(t.nrows());
    for (start, size) in block_sizes(t) {
        if size == 1 {
            eigs.push((t[(start, start)], 0.0));
        } else {
            let a = t[(start, start)];
            let b = t[(start, start + 1)];
            let c = t[(start + 1, start)];
            let d = t[(start + 1, start + 1)];
            let mean = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc >= 0.0 {
                let root = disc.sqrt();
                eigs.push((mean + root, 0.0));
                eigs.push((mean - root, 0.0));
            } else {
                let im = (-disc).sqrt();
                eigs.push((mean, im));
                eigs.push((mean, -im));
            }
        }
    }
    eigs
}

/// Full orthogonal factor of the QR decomposition of a tall thin matrix,
/// by Householder reflections. Used on tiny (<= 4 column) swap windows.
fn householder_full_q(m: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = m.nrows();
    let cols = m.ncols();
    let mut r = m.clone();
    let mut q = DMatrix::<f64>::identity(rows, rows);
    for col in 0..cols.min(rows.saturating_sub(1)) {
        let x = r.view((col, col), (rows - col, 1)).into_owned();
        let norm_x = x.norm();
        if norm_x < 1e-300 {
            continue;
        }
        let mut v = x;
        v[(0, 0)] += v[(0, 0)].signum() * norm_x;
        let norm_v = v.norm();
        if norm_v < 1e-300 {
            continue;
        }
        let v = v / norm_v;
        // r[col.., col..] -= 2 v (v^T r)
        let sub = r.view((col, col), (rows - col, cols - col)).into_owned();
        let vt_sub = v.transpose() * &sub;
        let update = &v * vt_sub;
        let mut target = r.view_mut((col, col), (rows - col, cols - col));
        target -= 2.0 * update;
        // q[.., col..] -= 2 (q v) v^T
        let qsub = q.view((0, col), (rows, rows - col)).into_owned();
        let qv = &qsub * &v;
        let update_q = qv * v.transpose();
        let mut target_q = q.view_mut((0, col), (rows, rows - col));
        target_q -= 2.0 * update_q;
    }
    q
}

/// Swap two adjacent diagonal blocks of `t` (sizes `p` then `s`, starting at
/// row `i`) by an orthogonal similarity, accumulating the transform into `q`.
fn swap_adjacent_blocks(
    q: &mut DMatrix<f64>,
    t: &mut DMatrix<f64>,
    i: usize,
    p: usize,
    s: usize,
) -> Result<(), RiccatiError> {
    let n = t.nrows();
    let w = p + s;
    let a11 = t.view((i, i), (p, p)).into_owned();
    let a12 = t.view((i, i + p), (p, s)).into_owned();
    let a22 = t.view((i + p, i + p), (s, s)).into_owned();

    // Solve A11 X - X A22 = A12 (size <= 4 Kronecker system).
    let mut kron = DMatrix::<f64>::zeros(p * s, p * s);
    for col in 0..s {
        for row in 0..p {
            let eq = col * p + row;
            for k in 0..p {
                kron[(eq, col * p + k)] += a11[(row, k)];
            }
            for l in 0..s {
                kron[(eq, l * p + row)] -= a22[(l, col)];
            }
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(p * s, 1);
    for col in 0..s {
        for row in 0..p {
            rhs[(col * p + row, 0)] = a12[(row, col)];
        }
    }
    let lu = kron.full_piv_lu();
    let sol = lu.solve(&rhs).ok_or_else(|| {
        RiccatiError::NoConvergence("singular system while reordering Schur blocks".into())
    })?;
    let mut x = DMatrix::<f64>::zeros(p, s);
    for col in 0..s {
        for row in 0..p {
            x[(row, col)] = sol[(col * p + row, 0)];
        }
    }

    // Columns of [-X; I] span the invariant subspace of the trailing block.
    let mut z = DMatrix::<f64>::zeros(w, s);
    z.view_mut((0, 0), (p, s)).copy_from(&(-x));
    z.view_mut((p, 0), (s, s)).copy_from(&DMatrix::identity(s, s));
    let g = householder_full_q(&z);

    // Similarity on the window: rows then columns, and accumulate into q.
    let t_rows = t.view((i, 0), (w, n)).into_owned();
    t.view_mut((i, 0), (w, n)).copy_from(&(g.transpose() * t_rows));
    let t_cols = t.view((0, i), (n, w)).into_owned();
    t.view_mut((0, i), (n, w)).copy_from(&(t_cols * &g));
    let q_cols = q.view((0, i), (n, w)).into_owned();
    q.view_mut((0, i), (n, w)).copy_from(&(q_cols * &g));

    // The sub-block below the new leading block is zero up to roundoff.
    for col in 0..s {
        for row in s..w {
            t[(i + row, i + col)] = 0.0;
        }
    }
    Ok(())
}

/// Split a 2x2 diagonal block with real eigenvalues into two 1x1 blocks via
/// a rotation built from an eigenvector.
fn split_real_block(q: &mut DMatrix<f64>, t: &mut DMatrix<f64>, i: usize) {
    let n = t.nrows();
    let a = t[(i, i)];
    let b = t[(i, i + 1)];
    let c = t[(i + 1, i)];
    let d = t[(i + 1, i + 1)];
    let mean = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc < 0.0 {
        return;
    }
    let root = disc.sqrt();
    // Eigenvector for the eigenvalue further from the mean keeps the
    // rotation well conditioned.
    let lambda = if mean >= 0.0 { mean + root } else { mean - root };
    // (M - lambda I) v = 0 with M = [[a, b], [c, d]].
    let (v0, v1) = if b.abs() + (a - lambda).abs() > c.abs() + (d - lambda).abs() {
        (-b, a - lambda)
    } else {
        (d - lambda, -c)
    };
    let norm = (v0 * v0 + v1 * v1).sqrt();
    if norm < 1e-300 {
        return;
    }
    // Rotation with first column = eigenvector.
    let (cth, sth) = (v0 / norm, v1 / norm);
    let g = DMatrix::<f64>::from_row_slice(2, 2, &[cth, -sth, sth, cth]);

    let t_rows = t.view((i, 0), (2, n)).into_owned();
    t.view_mut((i, 0), (2, n)).copy_from(&(g.transpose() * t_rows));
    let t_cols = t.view((0, i), (n, 2)).into_owned();
    t.view_mut((0, i), (n, 2)).copy_from(&(t_cols * &g));
    let q_cols = q.view((0, i), (n, 2)).into_owned();
    q.view_mut((0, i), (n, 2)).copy_from(&(q_cols * &g));
    t[(i + 1, i)] = 0.0;
}

/// Reorder a real Schur form so every eigenvalue with negative real part
/// appears in the leading diagonal blocks. Returns the number of stable
/// eigenvalues found.
pub fn reorder_stable_first(
    q: &mut DMatrix<f64>,
    t: &mut DMatrix<f64>,
) -> Result<usize, RiccatiError> {
    // Normalize: 2x2 blocks with real eigenvalues are split so stability is
    // a per-block property.
    let blocks = block_sizes(t);
    for (start, size) in blocks {
        if size == 2 {
            let a = t[(start, start)];
            let b = t[(start, start + 1)];
            let c = t[(start + 1, start)];
            let d = t[(start + 1, start + 1)];
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc >= 0.0 {
                split_real_block(q, t, start);
            }
        }
    }

    // Bubble stable blocks over unstable ones until sorted.
    loop {
        let blocks = block_sizes(t);
        let mut swapped = false;
        for w in blocks.windows(2) {
            let (i1, s1) = w[0];
            let (_i2, s2) = w[1];
            let stable1 = block_real_parts(t, i1, s1).0 < 0.0 && block_real_parts(t, i1, s1).1 < 0.0;
            let (re2a, re2b) = block_real_parts(t, i1 + s1, s2);
            let stable2 = re2a < 0.0 && re2b < 0.0;
            if !stable1 && stable2 {
                swap_adjacent_blocks(q, t, i1, s1, s2)?;
                swapped = true;
                break;
            }
        }
        if !swapped {
            break;
        }
    }

    let stable = quasi_triangular_eigenvalues(t)
        .iter()
        .filter(|(re, _)| *re < 0.0)
        .count();
    Ok(stable)
}
