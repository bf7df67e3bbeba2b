//! ℓ₁-penalized Gaussian MLE under a symmetric block-Toeplitz constraint,
//! solved by ADMM.
//!
//! Minimizes `λ Σ_{i≠j} |A_ij| − Σ_x ℓℓ(x, A)` which, divided by m/2, is the
//! graphical lasso `tr(S A) − log det A + (2λ/m) Σ_{i≠j} |A_ij|`. The sparse
//! copy Z is updated by projecting onto block-Toeplitz matrices (averaging
//! tied entries) followed by soft thresholding, which is the exact proximal
//! step for the constrained ℓ₁ term.

use nalgebra::SymmetricEigen;

use crate::linalg::{self, Matrix, Vector};
use crate::{Error, Result};

/// Blend ratio towards the diagonal when a cluster has fewer than n + 1 windows.
pub const SHRINKAGE: f64 = 0.2;
/// Diagonal shift applied if the returned precision is not positive definite.
pub const PD_DELTA: f64 = 1e-6;
const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    pub rho: f64,
    pub max_iters: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 1000,
            eps_abs: 1e-6,
            eps_rel: 1e-5,
        }
    }
}

/// Result of one M-step fit.
#[derive(Debug, Clone)]
pub struct MrfFit {
    pub precision: Matrix,
    pub mean: Vector,
    pub converged: bool,
    pub iterations: usize,
}

/// Sample mean and biased (1/m) covariance.
pub fn empirical_moments(windows: &[&Vector]) -> (Vector, Matrix) {
    let m = windows.len() as f64;
    let dim = windows[0].len();
    let mut mean = Vector::zeros(dim);
    for w in windows {
        mean += *w;
    }
    mean /= m;
    let mut cov = Matrix::zeros(dim, dim);
    for w in windows {
        let d = *w - &mean;
        cov.syger(1.0, &d, &d, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    cov /= m;
    (mean, cov)
}

fn soft(x: f64, kappa: f64) -> f64 {
    if x > kappa {
        x - kappa
    } else if x < -kappa {
        x + kappa
    } else {
        0.0
    }
}

/// Fits one cluster's precision matrix and mean.
pub fn fit_toeplitz_mrf(
    windows: &[&Vector],
    n_sensors: usize,
    t_w: usize,
    lambda: f64,
    opts: &AdmmOptions,
) -> Result<MrfFit> {
    if windows.is_empty() {
        return Err(Error::Dimension("cannot fit a cluster with no windows".into()));
    }
    let dim = n_sensors * t_w;
    if windows.iter().any(|w| w.len() != dim) {
        return Err(Error::Dimension(format!("windows must have length {dim}")));
    }
    let m = windows.len();
    let (mean, mut cov) = empirical_moments(windows);
    if m < dim + 1 {
        let diag = Matrix::from_diagonal(&cov.diagonal());
        cov = cov * (1.0 - SHRINKAGE) + diag * SHRINKAGE;
    }
    for i in 0..dim {
        cov[(i, i)] = cov[(i, i)].max(VARIANCE_FLOOR);
    }
    let penalty = 2.0 * lambda / m as f64;
    let (precision, converged, iterations) = toeplitz_glasso(&cov, n_sensors, t_w, penalty, opts);
    Ok(MrfFit {
        precision,
        mean,
        converged,
        iterations,
    })
}

/// ADMM for `tr(S Θ) − log det Θ + penalty Σ_{i≠j}|Θ_ij|` over symmetric
/// block-Toeplitz Θ. Returns the sparse iterate, a convergence flag and the
/// iteration count.
pub fn toeplitz_glasso(
    cov: &Matrix,
    n_sensors: usize,
    t_w: usize,
    penalty: f64,
    opts: &AdmmOptions,
) -> (Matrix, bool, usize) {
    let dim = cov.nrows();
    let mut rho = opts.rho;
    let mut z = Matrix::identity(dim, dim);
    let mut u = Matrix::zeros(dim, dim);
    let mut converged = false;
    let mut iters = 0;
    let scale = dim as f64;

    for it in 0..opts.max_iters {
        iters = it + 1;
        let rhs = linalg::symmetrize(&((&z - &u) * rho - cov));
        let eig = SymmetricEigen::new(rhs);
        let theta_diag = eig
            .eigenvalues
            .map(|d| (d + (d * d + 4.0 * rho).sqrt()) / (2.0 * rho));
        let q = &eig.eigenvectors;
        let theta = q * Matrix::from_diagonal(&theta_diag) * q.transpose();

        let z_prev = z;
        let mut zn = linalg::project_block_toeplitz(&(&theta + &u), n_sensors, t_w);
        let kappa = penalty / rho;
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    zn[(i, j)] = soft(zn[(i, j)], kappa);
                }
            }
        }
        z = zn;
        u += &theta - &z;

        let r_norm = (&theta - &z).norm();
        let s_norm = rho * (&z - &z_prev).norm();
        let eps_pri = scale * opts.eps_abs + opts.eps_rel * theta.norm().max(z.norm());
        let eps_dual = scale * opts.eps_abs + opts.eps_rel * rho * u.norm();
        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            break;
        }
        if r_norm > 10.0 * s_norm {
            rho *= 2.0;
            u /= 2.0;
        } else if s_norm > 10.0 * r_norm {
            rho /= 2.0;
            u *= 2.0;
        }
    }
    linalg::shift_to_positive_definite(&mut z, PD_DELTA);
    (z, converged, iters)
}
