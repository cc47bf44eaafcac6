use nalgebra::{DMatrix, DVector};

use super::analytic::build_k_tilde;
use crate::error::{Error, Result};
use crate::glmm::{FittedGlmm, VarianceComponents};
use crate::linalg::psd_factor;
use crate::model::Dataset;
use crate::rng;

/// Random-effect law δ used to draw replicate training sets.
#[derive(Debug, Clone)]
pub enum EffectLaw {
    None,
    Clustered { sigma_u: f64, sigma_s: f64 },
    /// δ = L z with z standard normal.
    Spatial { factor: DMatrix<f64> },
}

fn sd(v: f64) -> f64 {
    v.max(0.0).sqrt()
}

impl EffectLaw {
    fn build(fit: &FittedGlmm, data: &Dataset, adjusted: bool) -> Result<Self> {
        match (fit.components, data.clusters(), data.spatial()) {
            (VarianceComponents::None, None, None) => Ok(EffectLaw::None),
            (
                VarianceComponents::Clustered {
                    sigma_u_sq,
                    sigma_s_sq,
                },
                Some(_),
                None,
            ) => Ok(EffectLaw::Clustered {
                sigma_u: sd(sigma_u_sq),
                sigma_s: sd(sigma_s_sq),
            }),
            (VarianceComponents::Spatial(k), None, Some(sp)) => {
                let cov = if adjusted {
                    build_k_tilde(sp, &k)?.k_tilde
                } else {
                    k.matrix(sp.coords())
                };
                Ok(EffectLaw::Spatial { factor: psd_factor(&cov) })
            }
            _ => Err(Error::InvalidArgument(
                "fitted variance components do not match the dataset's correlation index".into(),
            )),
        }
    }

    /// The fitted law itself (kernel K̂ for spatial fits).
    pub fn fitted(fit: &FittedGlmm, data: &Dataset) -> Result<Self> {
        Self::build(fit, data, false)
    }

    /// The law replicates are drawn from: spatial fields use the
    /// region-adjusted covariance K̃.
    pub fn bootstrap(fit: &FittedGlmm, data: &Dataset) -> Result<Self> {
        Self::build(fit, data, true)
    }

    pub fn is_none(&self) -> bool {
        matches!(self, EffectLaw::None)
    }

    /// True when δ is a point mass at zero.
    pub fn is_zero(&self) -> bool {
        match self {
            EffectLaw::None => true,
            EffectLaw::Clustered { sigma_u, sigma_s } => *sigma_u == 0.0 && *sigma_s == 0.0,
            EffectLaw::Spatial { factor } => factor.ncols() == 0,
        }
    }

    /// One draw of δ on the rows of `data`.
    pub fn draw<R: rand::Rng + ?Sized>(&self, data: &Dataset, rng: &mut R) -> DVector<f64> {
        let n = data.n();
        match self {
            EffectLaw::None => DVector::zeros(n),
            EffectLaw::Clustered { sigma_u, sigma_s } => {
                let c = data.clusters().expect("law was built for clustered data");
                let u: Vec<f64> = (0..c.q1()).map(|_| sigma_u * rng::normal(rng)).collect();
                let s: Vec<f64> = (0..c.q2()).map(|_| sigma_s * rng::normal(rng)).collect();
                DVector::from_vec(c.effects(&u, &s))
            }
            EffectLaw::Spatial { factor } => {
                let z = DVector::from_fn(factor.ncols(), |_, _| rng::normal(rng));
                factor * z
            }
        }
    }
}
