use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian kernel K̂(z1, z2) = σ_out² exp(−σ_in² ‖z1 − z2‖²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub sigma_out_sq: f64,
    pub sigma_in_sq: f64,
}

impl KernelParams {
    pub fn new(sigma_out_sq: f64, sigma_in_sq: f64) -> Result<Self> {
        if !(sigma_out_sq >= 0.0) || !sigma_out_sq.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma_out_sq must be non-negative, got {sigma_out_sq}"
            )));
        }
        if !(sigma_in_sq >= 0.0) || !sigma_in_sq.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma_in_sq must be non-negative, got {sigma_in_sq}"
            )));
        }
        Ok(Self {
            sigma_out_sq,
            sigma_in_sq,
        })
    }

    pub fn value(&self, z1: [f64; 2], z2: [f64; 2]) -> f64 {
        self.sigma_out_sq * (-self.sigma_in_sq * sq_dist(z1, z2)).exp()
    }

    pub fn matrix(&self, coords: &[[f64; 2]]) -> DMatrix<f64> {
        let n = coords.len();
        DMatrix::from_fn(n, n, |a, b| self.value(coords[a], coords[b]))
    }

    /// Kernel matrix from precomputed squared distances.
    pub(crate) fn from_sq_distances(&self, d2: &DMatrix<f64>) -> DMatrix<f64> {
        d2.map(|d| self.sigma_out_sq * (-self.sigma_in_sq * d).exp())
    }
}

pub(crate) fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

pub(crate) fn sq_distances(coords: &[[f64; 2]]) -> DMatrix<f64> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |a, b| sq_dist(coords[a], coords[b]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_marginal_variance() {
        let k = KernelParams::new(2.5, 3.0).unwrap();
        assert_eq!(k.value([1.0, 2.0], [1.0, 2.0]), 2.5);
        let m = k.matrix(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!((m[(0, 1)] - 2.5 * (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative() {
        assert!(KernelParams::new(-1.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, f64::NAN).is_err());
    }
}
