use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::law::EffectLaw;
use super::moments::MarginalMoments;
use super::taylor::{taylor_eta, TaylorProjector};
use super::{mean_se, BiasEstimate, BootstrapConfig, Estimator};
use crate::cv::{cv_fit, FoldPlan, Scenario};
use crate::error::{Error, Result};
use crate::glmm::{FittedGlmm, Learner};
use crate::model::{Dataset, Link, Loss};
use crate::rng::{self, domain};

/// Held-out linear predictors and responses of every bootstrap replicate.
///
/// Replicates are stored group-major: `groups` outer replicates with
/// `per_group` inner replicates each. Single-loop bootstraps have one group.
#[derive(Debug, Clone)]
pub struct ReplicateDraws {
    pub estimator: Estimator,
    pub link: Link,
    pub groups: usize,
    pub per_group: usize,
    pub eta_cv: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub degenerate: bool,
    n: usize,
}

impl ReplicateDraws {
    fn degenerate(estimator: Estimator, link: Link, n: usize) -> Self {
        Self {
            estimator,
            link,
            groups: 0,
            per_group: 0,
            eta_cv: Vec::new(),
            y: Vec::new(),
            degenerate: true,
            n,
        }
    }

    /// Single-loop draws from precomputed replicates.
    pub(crate) fn single(estimator: Estimator, link: Link, eta_cv: Vec<DVector<f64>>, y: Vec<DVector<f64>>, n: usize) -> Self {
        Self {
            estimator,
            link,
            groups: 1,
            per_group: eta_cv.len(),
            eta_cv,
            y,
            degenerate: false,
            n,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn replicates(&self) -> usize {
        self.eta_cv.len()
    }
}

/// Effects of one replicate, available to refitters that need them.
struct Draw<'a> {
    y: DVector<f64>,
    u: Option<&'a DVector<f64>>,
    s: Option<DVector<f64>>,
}

fn replicate_error(e: Error, outer: usize, inner: usize) -> Error {
    match e {
        Error::Fold { fold, source } => Error::Replicate {
            outer,
            inner,
            fold,
            source,
        },
        other => Error::Replicate {
            outer,
            inner,
            fold: 0,
            source: Box::new(other),
        },
    }
}

pub(crate) fn is_degenerate(law: &EffectLaw, scenario: Scenario) -> bool {
    match (law, scenario) {
        (EffectLaw::None, _) => false,
        (EffectLaw::Clustered { sigma_s, .. }, Scenario::SharedEntities) => *sigma_s == 0.0,
        _ => law.is_zero(),
    }
}

/// Draw replicate training sets from the fitted law and collect the
/// held-out predictions produced by `refit`.
fn drive<F>(
    data: &Dataset,
    fit: &FittedGlmm,
    cfg: &BootstrapConfig,
    scenario: Scenario,
    estimator: Estimator,
    refit: F,
) -> Result<ReplicateDraws>
where
    F: Fn(&Draw) -> Result<DVector<f64>> + Sync,
{
    cfg.validate()?;
    if fit.beta.len() != data.p() {
        return Err(Error::InvalidArgument("fit does not match the dataset".into()));
    }
    let law = EffectLaw::bootstrap(fit, data)?;
    let link = fit.family.link;
    let n = data.n();
    if is_degenerate(&law, scenario) {
        return Ok(ReplicateDraws::degenerate(estimator, link, n));
    }
    let fixed = data.x() * &fit.beta;
    let family = fit.family;
    let respond = |delta: &DVector<f64>, r: &mut rng::Stream| {
        let eta = &fixed + delta;
        DVector::from_vec(family.sample(eta.as_slice(), r))
    };

    let nested = matches!(
        (&law, scenario),
        (EffectLaw::Clustered { .. }, Scenario::SharedEntities)
    );
    let (groups, per_group) = if nested { (cfg.b1, cfg.b2) } else { (1, cfg.b) };

    let results: Vec<Result<(DVector<f64>, DVector<f64>)>> = if let (true, EffectLaw::Clustered { sigma_u, sigma_s }) =
        (nested, &law)
    {
        let c = data.clusters().expect("clustered law");
        let us: Vec<DVector<f64>> = (0..groups)
            .map(|g| {
                let mut r = rng::stream(cfg.seed, domain::BOOTSTRAP_OUTER, g as u64);
                DVector::from_fn(c.q1(), |_, _| sigma_u * rng::normal(&mut r))
            })
            .collect();
        (0..groups * per_group)
            .into_par_iter()
            .map(|t| {
                let (g, j) = (t / per_group, t % per_group);
                let mut r = rng::stream(cfg.seed, domain::BOOTSTRAP_INNER, rng::nested_index(g, j));
                let u = &us[g];
                let s = DVector::from_fn(c.q2(), |_, _| sigma_s * rng::normal(&mut r));
                let delta = DVector::from_vec(c.effects(u.as_slice(), s.as_slice()));
                let y = respond(&delta, &mut r);
                let draw = Draw {
                    y,
                    u: Some(u),
                    s: Some(s),
                };
                let eta = refit(&draw).map_err(|e| replicate_error(e, g + 1, j + 1))?;
                Ok((eta, draw.y))
            })
            .collect()
    } else {
        (0..per_group)
            .into_par_iter()
            .map(|b| {
                let mut r = rng::stream(cfg.seed, domain::BOOTSTRAP_OUTER, b as u64);
                let delta = law.draw(data, &mut r);
                let y = respond(&delta, &mut r);
                let draw = Draw { y, u: None, s: None };
                let eta = refit(&draw).map_err(|e| replicate_error(e, b + 1, 0))?;
                Ok((eta, draw.y))
            })
            .collect()
    };
    let mut eta_cv = Vec::with_capacity(results.len());
    let mut ys = Vec::with_capacity(results.len());
    for r in results {
        let (e, y) = r?;
        eta_cv.push(e);
        ys.push(y);
    }
    Ok(ReplicateDraws {
        estimator,
        link,
        groups,
        per_group,
        eta_cv,
        y: ys,
        degenerate: false,
        n,
    })
}

/// Parametric bootstrap with full refits of `learner` on every fold of every
/// replicate. Refits start from `learner.warm_model(fit)` when available.
pub fn empirical_draws<L: Learner>(
    learner: &L,
    data: &Dataset,
    plan: &FoldPlan,
    fit: &FittedGlmm,
    cfg: &BootstrapConfig,
    scenario: Scenario,
) -> Result<ReplicateDraws> {
    let start = learner.warm_model(fit);
    drive(data, fit, cfg, scenario, Estimator::Empirical, |draw| {
        let rep = data.with_response(draw.y.clone())?;
        Ok(cv_fit(learner, &rep, plan, scenario, start.as_ref())?.eta_cv)
    })
}

/// Parametric bootstrap with one-step Taylor refits around the fit.
pub fn fast_draws(
    data: &Dataset,
    plan: &FoldPlan,
    fit: &FittedGlmm,
    mm: &MarginalMoments,
    cfg: &BootstrapConfig,
    scenario: Scenario,
) -> Result<ReplicateDraws> {
    let tp = TaylorProjector::new(data, &fit.beta, mm, plan)?;
    let shared = scenario == Scenario::SharedEntities && data.clusters().is_some();
    drive(data, fit, cfg, scenario, Estimator::Fast, |draw| {
        if !shared {
            return Ok(tp.eta_cv(&draw.y));
        }
        let c = data.clusters().expect("clustered data");
        let (u_b, s_b) = (draw.u.expect("nested draw"), draw.s.as_ref().expect("nested draw"));
        let mut eta = DVector::zeros(data.n());
        for (k, fold) in tp.folds.iter().enumerate() {
            let bt = tp.taylor_beta(k, &draw.y);
            let (u, _, _) = taylor_eta(fit, fold, &draw.y, &bt, u_b, s_b).map_err(|e| e.in_fold(k + 1))?;
            for &i in &fold.test {
                eta[i] = data.x().row(i).dot(&bt.transpose()) + u[c.entity()[i]];
            }
        }
        Ok(eta)
    })
}

/// Ĉ_i = Cov(f(η_i^cv), y_i) over the replicates, averaged over outer
/// replicates for nested draws, and w = mean_i Ĉ_i.
///
/// Monte-Carlo errors: across outer replicates for nested draws; otherwise
/// from the per-replicate terms c_b = mean_i (l_bi − l̄_i)(y_bi − ȳ_i)·B/(B−1),
/// whose mean is exactly w.
pub fn estimate_from_draws<F>(draws: &ReplicateDraws, loss: Option<Loss>, f: F) -> Result<BiasEstimate>
where
    F: Fn(f64) -> Result<f64>,
{
    let n = draws.n;
    if draws.degenerate {
        return Ok(BiasEstimate::degenerate(draws.estimator, loss, n));
    }
    let (g, m) = (draws.groups, draws.per_group);
    let mut l = DMatrix::zeros(n, g * m);
    for (t, eta) in draws.eta_cv.iter().enumerate() {
        for i in 0..n {
            l[(i, t)] = f(eta[i])?;
        }
    }
    // Cross-products centered within each group.
    let mut cov_gi = DMatrix::zeros(g, n);
    let mut prod = DMatrix::zeros(n, g * m);
    let scale = m as f64 / (m as f64 - 1.0);
    for gi in 0..g {
        for i in 0..n {
            let cols = gi * m..(gi + 1) * m;
            let lbar = cols.clone().map(|t| l[(i, t)]).sum::<f64>() / m as f64;
            let ybar = cols.clone().map(|t| draws.y[t][i]).sum::<f64>() / m as f64;
            let mut acc = 0.0;
            for t in cols {
                let v = (l[(i, t)] - lbar) * (draws.y[t][i] - ybar) * scale;
                prod[(i, t)] = v;
                acc += v;
            }
            cov_gi[(gi, i)] = acc / m as f64;
        }
    }
    let per_obs_c: Vec<f64> = (0..n).map(|i| cov_gi.column(i).mean()).collect();
    let w = per_obs_c.iter().sum::<f64>() / n as f64;
    let (mc_se, per_obs_mc_se) = if g >= 2 {
        let group_means: Vec<f64> = (0..g).map(|gi| cov_gi.row(gi).mean()).collect();
        let se = mean_se(&group_means).1;
        let per: Vec<f64> = (0..n)
            .map(|i| mean_se(cov_gi.column(i).as_slice()).1)
            .collect();
        (se, per)
    } else {
        let c_b: Vec<f64> = (0..m).map(|t| prod.column(t).mean()).collect();
        let se = mean_se(&c_b).1;
        let per: Vec<f64> = (0..n)
            .map(|i| {
                let row: Vec<f64> = prod.row(i).iter().copied().collect();
                mean_se(&row).1
            })
            .collect();
        (se, per)
    };
    Ok(BiasEstimate {
        estimator: draws.estimator,
        loss,
        w_cv: w,
        per_obs_c,
        per_obs_mc_se,
        mc_se,
        replicates: g * m,
        degenerate: false,
    })
}

fn loss_estimate(draws: &ReplicateDraws, loss: Loss) -> Result<BiasEstimate> {
    let link = draws.link;
    estimate_from_draws(draws, Some(loss), |eta| loss.l2_at(eta, link))
}

/// Empirical (full-refit) estimate of w_cv for `loss`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_wcv<L: Learner>(
    learner: &L,
    data: &Dataset,
    plan: &FoldPlan,
    loss: Loss,
    fit: &FittedGlmm,
    cfg: &BootstrapConfig,
    scenario: Scenario,
) -> Result<BiasEstimate> {
    loss_estimate(&empirical_draws(learner, data, plan, fit, cfg, scenario)?, loss)
}

/// Empirical estimate on crossed entity × day data.
#[allow(clippy::too_many_arguments)]
pub fn empirical_wcv_clustered<L: Learner>(
    learner: &L,
    data: &Dataset,
    plan: &FoldPlan,
    loss: Loss,
    fit: &FittedGlmm,
    cfg: &BootstrapConfig,
    scenario: Scenario,
) -> Result<BiasEstimate> {
    if data.clusters().is_none() {
        return Err(Error::InvalidArgument("clustered data required".into()));
    }
    empirical_wcv(learner, data, plan, loss, fit, cfg, scenario)
}

/// Empirical estimate on spatial data, drawing fields from K̃.
pub fn empirical_wcv_spatial<L: Learner>(
    learner: &L,
    data: &Dataset,
    plan: &FoldPlan,
    loss: Loss,
    fit: &FittedGlmm,
    cfg: &BootstrapConfig,
) -> Result<BiasEstimate> {
    if data.spatial().is_none() {
        return Err(Error::InvalidArgument("spatial data required".into()));
    }
    empirical_wcv(learner, data, plan, loss, fit, cfg, Scenario::NewAll)
}

/// Taylor (fast) estimate of w_cv for `loss`.
pub fn fast_wcv(
    data: &Dataset,
    plan: &FoldPlan,
    loss: Loss,
    fit: &FittedGlmm,
    mm: &MarginalMoments,
    cfg: &BootstrapConfig,
    scenario: Scenario,
) -> Result<BiasEstimate> {
    loss_estimate(&fast_draws(data, plan, fit, mm, cfg, scenario)?, loss)
}

/// Fast estimate for a generalized-linear output layer on fixed features:
/// the feature matrix replaces X.
#[allow(clippy::too_many_arguments)]
pub fn last_layer_wcv(
    features: &DMatrix<f64>,
    data: &Dataset,
    plan: &FoldPlan,
    loss: Loss,
    fit: &FittedGlmm,
    mm: &MarginalMoments,
    cfg: &BootstrapConfig,
    scenario: Scenario,
) -> Result<BiasEstimate> {
    if fit.beta.len() != features.ncols() {
        return Err(Error::InvalidArgument(format!(
            "last layer has {} weights for {} features",
            fit.beta.len(),
            features.ncols()
        )));
    }
    let d = data.with_covariates(features.clone())?;
    fast_wcv(&d, plan, loss, fit, mm, cfg, scenario)
}
