use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::FeatureExtractor;
use crate::error::{Error, Result};
use crate::image::Image;

/// Diagonal loading added to both covariances before the matrix square root.
pub const FID_REGULARIZATION: f64 = 1e-6;

/// Mean and (unbiased) covariance of feature rows.
pub fn gaussian_fit(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mu = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mu, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

/// Frechet distance between two Gaussians.
pub fn frechet_distance(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> f64 {
    let ra = sym_sqrt(cov_a);
    let mut inner = &ra * cov_b * &ra;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = inner.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let dm = mu_a - mu_b;
    (dm.dot(&dm) + cov_a.trace() + cov_b.trace() - 2.0 * cross).max(0.0)
}

/// FID between two image sets in the extractor's feature space.
pub fn fid(a: &[Image], b: &[Image], extractor: &dyn FeatureExtractor) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract("FID needs at least two images per set".into()));
    }
    let fa: Vec<Vec<f64>> = a.par_iter().map(|x| extractor.features(x)).collect();
    let fb: Vec<Vec<f64>> = b.par_iter().map(|x| extractor.features(x)).collect();
    let (mu_a, mut ca) = gaussian_fit(&fa);
    let (mu_b, mut cb) = gaussian_fit(&fb);
    for i in 0..ca.nrows() {
        ca[(i, i)] += FID_REGULARIZATION;
        cb[(i, i)] += FID_REGULARIZATION;
    }
    let v = frechet_distance(&mu_a, &ca, &mu_b, &cb);
    if !v.is_finite() {
        return Err(Error::NonFinite("FID".into()));
    }
    Ok(v)
}
