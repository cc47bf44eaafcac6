use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::bootstrap::{estimate_from_draws, is_degenerate, ReplicateDraws};
use super::law::EffectLaw;
use super::moments::{marginal_moments, MarginalMoments};
use super::taylor::TaylorProjector;
use super::{BiasEstimate, BootstrapConfig, Estimator};
use crate::cv::{FoldPlan, Scenario};
use crate::error::{Error, Result};
use crate::glmm::{FittedGlmm, KernelParams, VarianceComponents};
use crate::linalg::{psd_clip, select_block, select_rows, SpdFactor};
use crate::model::{Dataset, Distribution, Link, Loss, SpatialIndex};
use crate::rng::{self, domain};

/// Region-adjusted spatial covariance: within-region kernel covariance minus
/// the mean cross-region covariance, zero across regions.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedCovariance {
    pub k_tilde: DMatrix<f64>,
    /// Mean of K̂ over pairs in different regions.
    pub k_bar: f64,
    /// Smallest eigenvalue over the region blocks before clipping.
    pub min_eigenvalue: f64,
}

pub fn build_k_tilde(spatial: &SpatialIndex, kernel: &KernelParams) -> Result<AdjustedCovariance> {
    let n = spatial.len();
    let region = spatial.region();
    let k = kernel.matrix(spatial.coords());
    let (mut sum, mut count) = (0.0, 0usize);
    for a in 0..n {
        for b in 0..n {
            if region[a] != region[b] {
                sum += k[(a, b)];
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument(
            "the adjusted covariance needs at least two non-empty regions".into(),
        ));
    }
    let k_bar = sum / count as f64;
    let mut k_tilde = DMatrix::zeros(n, n);
    let mut min = f64::INFINITY;
    for r in 0..spatial.q() {
        let rows: Vec<usize> = (0..n).filter(|&i| region[i] == r).collect();
        if rows.is_empty() {
            continue;
        }
        let block = select_block(&k, &rows, &rows).map(|v| v - k_bar);
        let (clipped, m) = psd_clip(&block);
        min = min.min(m);
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in rows.iter().enumerate() {
                k_tilde[(i, j)] = clipped[(a, b)];
            }
        }
    }
    Ok(AdjustedCovariance {
        k_tilde,
        k_bar,
        min_eigenvalue: min,
    })
}

/// Linear-smoother weights h_i and covariances k_i = Cov(Y_{-k}, y_i) under
/// the bootstrap law, both indexed by the training rows of i's fold.
#[derive(Debug, Clone)]
pub struct AnalyticTerms {
    pub h: Vec<DVector<f64>>,
    pub k: Vec<DVector<f64>>,
}

impl AnalyticTerms {
    /// h_iᵀ k_i for each observation.
    pub fn products(&self) -> Vec<f64> {
        self.h.iter().zip(&self.k).map(|(h, k)| h.dot(k)).collect()
    }
}

/// Covariance of the bootstrap law's effects, Cov(δ) (K̃ for spatial data).
/// Under shared entities the entity part is conditioned away.
fn effect_covariance(fit: &FittedGlmm, data: &Dataset, scenario: Scenario) -> Result<DMatrix<f64>> {
    let n = data.n();
    Ok(match (fit.components, data.clusters(), data.spatial()) {
        (
            VarianceComponents::Clustered {
                sigma_u_sq,
                sigma_s_sq,
            },
            Some(c),
            None,
        ) => match scenario {
            Scenario::NewAll => c.covariance(sigma_u_sq, sigma_s_sq),
            Scenario::SharedEntities => c.covariance(0.0, sigma_s_sq),
        },
        (VarianceComponents::Spatial(k), None, Some(s)) => build_k_tilde(s, &k)?.k_tilde,
        (VarianceComponents::None, None, None) => DMatrix::zeros(n, n),
        _ => {
            return Err(Error::InvalidArgument(
                "fitted variance components do not match the dataset's correlation index".into(),
            ))
        }
    })
}

/// Smoother weights and covariances of the Gaussian-identity GLS/BLUP
/// cross-validated predictor.
pub fn analytic_terms(data: &Dataset, fit: &FittedGlmm, plan: &FoldPlan, scenario: Scenario) -> Result<AnalyticTerms> {
    if !fit.family.is_gaussian_identity() {
        return Err(Error::Unsupported("analytic terms need a Gaussian-identity model".into()));
    }
    let mm = marginal_moments(&fit.beta, fit, data, 2, 0)?;
    let tp = TaylorProjector::new(data, &fit.beta, &mm, plan)?;
    let cov = effect_covariance(fit, data, scenario)?;
    let n = data.n();
    let mut h = vec![DVector::zeros(0); n];
    let mut k = vec![DVector::zeros(0); n];
    let shared = match (scenario, fit.components, data.clusters()) {
        (Scenario::SharedEntities, VarianceComponents::Clustered { sigma_u_sq, .. }, Some(c)) => Some((sigma_u_sq, c)),
        _ => None,
    };
    for (fk, fold) in tp.folds.iter().enumerate() {
        // Predicting a known entity adds û = σ_u² e_iᵀ V⁻¹ (Y − X β̃).
        let extra = match shared {
            Some((su2, _)) if su2 > 0.0 => {
                let v = select_block(&mm.v, &fold.train, &fold.train);
                let fac = SpdFactor::new(&v, "marginal covariance").map_err(|e| e.in_fold(fk + 1))?;
                let x_train = select_rows(data.x(), &fold.train);
                Some((su2, fac, x_train))
            }
            _ => None,
        };
        for (j, &i) in fold.test.iter().enumerate() {
            let mut hi = tp.weights(fk, j);
            if let (Some((su2, fac, x_train)), Some((_, c))) = (&extra, shared) {
                let e = DVector::from_fn(fold.train.len(), |a, _| {
                    (c.entity()[fold.train[a]] == c.entity()[i]) as u8 as f64
                });
                let ve = fac.solve_vec(&e);
                let correction = &ve - fold.p.transpose() * x_train.tr_mul(&ve);
                hi += correction * *su2;
            }
            h[i] = hi;
            k[i] = DVector::from_fn(fold.train.len(), |a, _| cov[(fold.train[a], i)]);
        }
    }
    Ok(AnalyticTerms { h, k })
}

fn law_degenerate(fit: &FittedGlmm, data: &Dataset, scenario: Scenario) -> Result<bool> {
    Ok(is_degenerate(&EffectLaw::bootstrap(fit, data)?, scenario))
}

/// Closed-form w_cv = (2/n) Σ_i h_iᵀ k_i for squared loss under a
/// Gaussian-identity mixed model. Exact; the Monte-Carlo error is 0.
pub fn lmm_analytic_wcv(data: &Dataset, fit: &FittedGlmm, plan: &FoldPlan, scenario: Scenario) -> Result<BiasEstimate> {
    let degenerate = law_degenerate(fit, data, scenario)?;
    if degenerate {
        return Ok(BiasEstimate::degenerate(Estimator::Analytic, Some(Loss::Squared), data.n()));
    }
    let per_obs_c: Vec<f64> = analytic_terms(data, fit, plan, scenario)?
        .products()
        .into_iter()
        .map(|v| 2.0 * v)
        .collect();
    let n = data.n();
    Ok(BiasEstimate {
        estimator: Estimator::Analytic,
        loss: Some(Loss::Squared),
        w_cv: per_obs_c.iter().sum::<f64>() / n as f64,
        per_obs_c,
        per_obs_mc_se: vec![0.0; n],
        mc_se: 0.0,
        replicates: 0,
        degenerate: false,
    })
}

/// Factor c with L2(ŷ) = c·η for a loss paired with its canonical family.
fn canonical_factor(loss: Loss, fit: &FittedGlmm) -> Option<f64> {
    let f = fit.family;
    match (loss, f.distribution, f.link) {
        (Loss::Squared, Distribution::Gaussian, Link::Identity) => Some(2.0),
        (Loss::CrossEntropy, Distribution::Bernoulli, Link::Sigmoid) => Some(1.0),
        (Loss::PoissonNll, Distribution::Poisson, Link::Log) => Some(1.0),
        _ => None,
    }
}

/// Canonical-loss estimate C̃_i = c·h_iᵀ Cov(g(η_{-k}), g(η_i)): with a
/// canonical link the response noise drops out and only the conditional
/// means need to be simulated. Gaussian-identity models are exact.
#[allow(clippy::too_many_arguments)]
pub fn canonical_c_tilde(
    data: &Dataset,
    plan: &FoldPlan,
    loss: Loss,
    fit: &FittedGlmm,
    mm: &MarginalMoments,
    cfg: &BootstrapConfig,
    scenario: Scenario,
) -> Result<BiasEstimate> {
    let factor = canonical_factor(loss, fit).ok_or_else(|| {
        Error::Unsupported(format!(
            "{loss} is not the canonical loss of the {:?}-{:?} family",
            fit.family.distribution, fit.family.link
        ))
    })?;
    if scenario == Scenario::SharedEntities && data.clusters().is_some() {
        return Err(Error::Unsupported(
            "the canonical estimator covers the new-entities scenario only".into(),
        ));
    }
    cfg.validate()?;
    let n = data.n();
    if law_degenerate(fit, data, scenario)? {
        return Ok(BiasEstimate::degenerate(Estimator::Canonical, Some(loss), n));
    }
    if fit.family.is_gaussian_identity() {
        let mut e = lmm_analytic_wcv(data, fit, plan, scenario)?;
        e.estimator = Estimator::Canonical;
        return Ok(e);
    }
    let tp = TaylorProjector::new(data, &fit.beta, mm, plan)?;
    let law = EffectLaw::bootstrap(fit, data)?;
    let fixed = data.x() * &fit.beta;
    let link = fit.family.link;
    let pairs: Vec<(DVector<f64>, DVector<f64>)> = (0..cfg.b)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(cfg.seed, domain::CANONICAL, b as u64);
            let g = (&fixed + law.draw(data, &mut r)).map(|e| link.mean(e));
            (tp.eta_cv(&g), g)
        })
        .collect();
    let (a, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let draws = ReplicateDraws::single(Estimator::Canonical, link, a, g, n);
    estimate_from_draws(&draws, Some(loss), |v| Ok(factor * v))
}
