//! Dense helpers for stacked (N·t_w)×(N·t_w) matrices.
//!
//! A stacked matrix is a t_w×t_w grid of N×N sub-blocks; sub-block (i, j)
//! couples timestamp offset i with offset j (oldest first).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Orthogonal projection onto symmetric block-Toeplitz matrices: every sub-block
/// on block diagonal `lag` is replaced by the mean of all sub-blocks tied to it
/// (including the transposed ones below the diagonal).
pub fn project_block_toeplitz(m: &Matrix, n: usize, t_w: usize) -> Matrix {
    assert_eq!(m.nrows(), n * t_w);
    assert_eq!(m.ncols(), n * t_w);
    let mut out = Matrix::zeros(n * t_w, n * t_w);
    for lag in 0..t_w {
        let mut acc = Matrix::zeros(n, n);
        let count = (t_w - lag) as f64 * 2.0;
        for i in 0..t_w - lag {
            let j = i + lag;
            acc += m.view((i * n, j * n), (n, n));
            acc += m.view((j * n, i * n), (n, n)).transpose();
        }
        acc /= count;
        for i in 0..t_w - lag {
            let j = i + lag;
            out.view_mut((i * n, j * n), (n, n)).copy_from(&acc);
            if lag > 0 {
                out.view_mut((j * n, i * n), (n, n)).copy_from(&acc.transpose());
            }
        }
    }
    out
}

/// Builds a symmetric block-Toeplitz matrix from its first block row.
/// `blocks[lag]` is sub-block (0, lag); `blocks[0]` must be symmetric.
pub fn assemble_block_toeplitz(blocks: &[Matrix]) -> Matrix {
    let t_w = blocks.len();
    let n = blocks[0].nrows();
    let mut out = Matrix::zeros(n * t_w, n * t_w);
    for (lag, b) in blocks.iter().enumerate() {
        for i in 0..t_w - lag {
            let j = i + lag;
            out.view_mut((i * n, j * n), (n, n)).copy_from(b);
            if lag > 0 {
                out.view_mut((j * n, i * n), (n, n)).copy_from(&b.transpose());
            }
        }
    }
    out
}

/// Largest entrywise gap between sub-block (i, j) and sub-block (i+1, j+1).
pub fn block_toeplitz_deviation(m: &Matrix, n: usize, t_w: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..t_w.saturating_sub(1) {
        for j in 0..t_w - 1 {
            let a = m.view((i * n, j * n), (n, n));
            let b = m.view(((i + 1) * n, (j + 1) * n), (n, n));
            for (x, y) in a.iter().zip(b.iter()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}

pub fn asymmetry(m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i + 1..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Shifts the diagonal so the smallest eigenvalue is at least `delta`, if it is
/// not already positive. Returns the applied shift.
pub fn shift_to_positive_definite(m: &mut Matrix, delta: f64) -> f64 {
    let lo = min_eigenvalue(m);
    if lo > 0.0 {
        return 0.0;
    }
    let shift = delta - lo;
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    shift
}

/// log det of a symmetric positive-definite matrix via Cholesky.
pub fn log_det_spd(m: &Matrix) -> Result<f64> {
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `xᵀ M x`
pub fn quad_form(m: &Matrix, x: &Vector) -> f64 {
    x.dot(&(m * x))
}

/// Cosine distance between the entrywise absolute values of two matrices,
/// taken as flat vectors. Zero against zero is 0; zero against non-zero is 1.
pub fn abs_cosine_distance(a: &Matrix, b: &Matrix) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let (x, y) = (x.abs(), y.abs());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0),
    }
}
