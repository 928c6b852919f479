use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Added to both covariances when either is singular.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

fn mean_cov(x: &Tensor) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.dims();
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean = DVector::from_iterator(d, (0..d).map(|j| m.column(j).sum() / n as f64));
    let mut centered = m;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mean, cov)
}

fn symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetric(m));
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetric(m)).eigenvalues.min()
}

/// Fréchet distance between Gaussian fits of two feature sets (rows are samples):
/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// The trace of the product root is taken as `Tr sqrt(S_a^{1/2} S_b S_a^{1/2})`
/// from the eigenvalues of that symmetrized product, negatives clamped to 0.
pub fn frechet_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (na, da) = a.dims();
    let (nb, db) = b.dims();
    if da != db {
        return Err(Error::shape("frechet_distance", format!("feature dims {} and {}", da, db)));
    }
    if na <= da || nb <= db {
        return Err(Error::invalid(format!(
            "Fréchet distance needs more samples than feature dimensions ({} and {} samples for {} dims)",
            na, nb, da
        )));
    }
    let (mu_a, mut sa) = mean_cov(a);
    let (mu_b, mut sb) = mean_cov(b);
    let scale = sa.trace().abs().max(sb.trace().abs()).max(1.0);
    if min_eigenvalue(&sa) <= 1e-12 * scale || min_eigenvalue(&sb) <= 1e-12 * scale {
        warn!("singular feature covariance; adding {} * I", COVARIANCE_RIDGE);
        let ridge = DMatrix::identity(da, da) * COVARIANCE_RIDGE;
        sa += &ridge;
        sb += ridge;
    }
    let root_a = sqrt_psd(&sa);
    let inner = symmetric(&(&root_a * &sb * &root_a));
    let tr_root: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let diff = (mu_a - mu_b).norm_squared();
    Ok((diff + sa.trace() + sb.trace() - 2.0 * tr_root).max(0.0))
}
