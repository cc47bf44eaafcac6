//! Estimators of the covariance term w_cv that corrects the optimism of
//! cross-validation on correlated data: CV_c = CV + w_cv.

mod analytic;
mod bootstrap;
mod law;
mod moments;
mod taylor;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::model::Loss;

pub use analytic::{
    analytic_terms, build_k_tilde, canonical_c_tilde, lmm_analytic_wcv, AdjustedCovariance, AnalyticTerms,
};
pub use bootstrap::{
    empirical_draws, empirical_wcv, empirical_wcv_clustered, empirical_wcv_spatial, estimate_from_draws,
    fast_draws, fast_wcv, last_layer_wcv, ReplicateDraws,
};
pub use law::EffectLaw;
pub use moments::{marginal_moments, quasi_score, MarginalMoments};
pub use taylor::{taylor_eta, FoldProjector, TaylorProjector};

/// Monte-Carlo sizes and seed of the bias estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    /// Replicates of the single-loop bootstrap (new entities, spatial, iid).
    pub b: usize,
    /// Outer replicates (entity effects) of the nested shared-entity bootstrap.
    pub b1: usize,
    /// Inner replicates (day effects and responses) per outer replicate.
    pub b2: usize,
    /// Random-effect draws used for the marginal moments.
    pub moment_draws: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b: 200,
            b1: 20,
            b2: 30,
            moment_draws: 2000,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("b", self.b), ("b1", self.b1), ("b2", self.b2), ("moment_draws", self.moment_draws)] {
            if v < 2 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 2, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which estimator produced a [`BiasEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Parametric bootstrap with full learner refits.
    Empirical,
    /// Parametric bootstrap with one-step Taylor refits.
    Fast,
    /// Canonical-loss covariance of conditional means.
    Canonical,
    /// Closed form for Gaussian-identity models.
    Analytic,
}

/// Estimated correction w_cv with per-observation terms and Monte-Carlo
/// standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub estimator: Estimator,
    pub loss: Option<Loss>,
    pub w_cv: f64,
    /// Ĉ_i, the estimated Cov(L2(ŷ_i^cv), y_i).
    pub per_obs_c: Vec<f64>,
    pub per_obs_mc_se: Vec<f64>,
    pub mc_se: f64,
    /// Number of response (or effect) replicates behind the estimate.
    pub replicates: usize,
    /// True when the fitted random-effect law is degenerate and w_cv was set to 0.
    pub degenerate: bool,
}

impl BiasEstimate {
    pub(crate) fn degenerate(estimator: Estimator, loss: Option<Loss>, n: usize) -> Self {
        Self {
            estimator,
            loss,
            w_cv: 0.0,
            per_obs_c: vec![0.0; n],
            per_obs_mc_se: vec![0.0; n],
            mc_se: 0.0,
            replicates: 0,
            degenerate: true,
        }
    }

    /// Per-observation CSV with columns `i, C_i, mc_se_i` (1-based `i`).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(["i", "C_i", "mc_se_i"]).map_err(io)?;
        for (i, (c, se)) in self.per_obs_c.iter().zip(&self.per_obs_mc_se).enumerate() {
            out.write_record([(i + 1).to_string(), fmt_f64(*c), fmt_f64(*se)]).map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Mean and Monte-Carlo standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let (m, sd) = crate::linalg::mean_sd(v);
    (m, sd / (v.len() as f64).sqrt())
}
