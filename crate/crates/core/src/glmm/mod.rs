//! Mixed-model fitting: Gaussian LMM by profile likelihood, GLMM by
//! penalized quasi-likelihood, plain GLM by IRLS and a Gauss–Hermite
//! single-factor Bernoulli fitter.

mod glm;
mod kernel;
mod learner;
mod lmm;
mod pql;
pub mod quadrature;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelFamily;

pub use glm::fit_glm;
pub use kernel::KernelParams;
pub use learner::{
    ConstantLearner, FixedComponentsLearner, GaussHermiteLearner, GlmLearner, GlmmLearner,
    Learner, MeanLearner,
};
pub use lmm::{fit_gls, fit_lmm, marginal_covariance};
pub use pql::{fit_glmm, fit_glmm_fixed, predict_random_effects};
pub(crate) use pql::effects_step;
pub use quadrature::{fit_gauss_hermite, nll_gauss_hermite, GhQuadrature};

/// Variance components γ_r of the random-effect law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarianceComponents {
    None,
    Clustered { sigma_u_sq: f64, sigma_s_sq: f64 },
    Spatial(KernelParams),
}

impl VarianceComponents {
    /// True when the random-effect law is a point mass at zero.
    pub fn is_zero(&self) -> bool {
        match *self {
            VarianceComponents::None => true,
            VarianceComponents::Clustered {
                sigma_u_sq,
                sigma_s_sq,
            } => sigma_u_sq == 0.0 && sigma_s_sq == 0.0,
            VarianceComponents::Spatial(k) => k.sigma_out_sq == 0.0,
        }
    }
}

/// How a held-out observation is predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    /// Use the predicted intercept of an entity seen in training.
    KnownEntity(usize),
    /// Fixed part only.
    NewEntity,
}

/// Convergence metadata of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Final objective (negative log-likelihood or penalized criterion).
    pub objective: f64,
}

impl FitReport {
    pub(crate) fn new(method: &str) -> Self {
        Self {
            method: method.to_string(),
            iterations: 0,
            converged: true,
            gradient_norm: 0.0,
            objective: f64::NAN,
        }
    }
}

/// Output of any of the mixed-model fitters.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedGlmm {
    pub family: ModelFamily,
    pub beta: DVector<f64>,
    pub components: VarianceComponents,
    pub u_hat: DVector<f64>,
    pub s_hat: DVector<f64>,
    pub report: FitReport,
}

/// Serializable view of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub family: ModelFamily,
    pub beta_hat: Vec<f64>,
    pub variance_components: VarianceComponents,
    pub phi_hat: f64,
    pub u_hat: Vec<f64>,
    pub s_hat: Vec<f64>,
    pub convergence: FitReport,
}

impl FittedGlmm {
    pub fn phi(&self) -> f64 {
        self.family.phi
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Linear predictor for covariate row `x`.
    pub fn predict_linear(&self, x: &[f64], mode: PredictMode) -> Result<f64> {
        if x.len() != self.beta.len() {
            return Err(Error::InvalidArgument(format!(
                "covariate vector has {} entries, model has {}",
                x.len(),
                self.beta.len()
            )));
        }
        let fixed: f64 = x.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum();
        match (mode, self.components) {
            (PredictMode::KnownEntity(j), VarianceComponents::Clustered { .. }) => {
                let u = self.u_hat.get(j).ok_or_else(|| {
                    Error::Index(format!(
                        "entity {} is unknown to the model ({} entities)",
                        j + 1,
                        self.u_hat.len()
                    ))
                })?;
                Ok(fixed + u)
            }
            _ => Ok(fixed),
        }
    }

    /// g(η̂) for covariate row `x`.
    pub fn predict_response(&self, x: &[f64], mode: PredictMode) -> Result<f64> {
        Ok(self.family.link.mean(self.predict_linear(x, mode)?))
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            family: self.family,
            beta_hat: self.beta.iter().copied().collect(),
            variance_components: self.components,
            phi_hat: self.family.phi,
            u_hat: self.u_hat.iter().copied().collect(),
            s_hat: self.s_hat.iter().copied().collect(),
            convergence: self.report.clone(),
        }
    }
}

/// Iteration controls shared by the iterative fitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Relative-change stopping tolerance.
    pub tol: f64,
    /// Ridge added to penalized normal matrices.
    pub ridge: f64,
    /// Variance components below this are set to exactly zero.
    pub absorb: f64,
    /// Points per axis of the initial variance-parameter grid.
    pub grid: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            ridge: 1e-8,
            absorb: 1e-6,
            grid: 7,
        }
    }
}

/// Log-spaced grid of `k` points over `[lo, hi]`.
pub(crate) fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k < 2 {
        return vec![(lo * hi).sqrt()];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp())
        .collect()
}
