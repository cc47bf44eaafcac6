//! K-fold cross-validation and the Monte-Carlo generalization-error oracle.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glmm::{KernelParams, Learner, PredictMode};
use crate::linalg::psd_factor;
use crate::model::{Dataset, Link, Loss, ModelFamily};
use crate::rng::{self, domain};

/// Assignment of observations to K folds (0-based fold ids).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    k: usize,
    fold_of: Vec<usize>,
    seed: u64,
}

/// Uniformly random split of `0..n` into `k` folds whose sizes differ by at
/// most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("need 2 <= K <= n, got K = {k}, n = {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, domain::FOLDS, 0));
    let mut fold_of = vec![0; n];
    for (j, &i) in perm.iter().enumerate() {
        fold_of[i] = j * k / n;
    }
    Ok(FoldPlan { k, fold_of, seed })
}

impl FoldPlan {
    /// Plan from an explicit assignment; every fold must be non-empty.
    pub fn from_assignment(fold_of: Vec<usize>, k: usize) -> Result<Self> {
        let mut seen = vec![false; k];
        for &f in &fold_of {
            if f >= k {
                return Err(Error::InvalidArgument(format!("fold id {} exceeds K = {k}", f + 1)));
            }
            seen[f] = true;
        }
        if k < 2 || seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("every fold must be non-empty and K >= 2".into()));
        }
        Ok(Self { k, fold_of, seed: 0 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Rows held out in fold `k`.
    pub fn test_rows(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == k).collect()
    }

    /// Rows used for training when fold `k` is held out.
    pub fn train_rows(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != k).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

/// Test-time scenario for clustered data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Test observations come with new entities and new days.
    #[default]
    NewAll,
    /// Test observations share the training entities; days are new.
    SharedEntities,
}

impl Scenario {
    /// Prediction rule for row `i` of `data`.
    pub fn mode(self, data: &Dataset, i: usize) -> PredictMode {
        match (self, data.clusters()) {
            (Scenario::SharedEntities, Some(c)) => PredictMode::KnownEntity(c.entity()[i]),
            _ => PredictMode::NewEntity,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "new_all" => Ok(Scenario::NewAll),
            "shared_entities" => Ok(Scenario::SharedEntities),
            _ => Err(Error::InvalidArgument(format!(
                "unknown scenario '{s}' (expected new_all or shared_entities)"
            ))),
        }
    }
}

/// Per-fold models and the held-out linear predictors they produce.
#[derive(Debug, Clone)]
pub struct CvFit<M> {
    pub models: Vec<M>,
    pub eta_cv: DVector<f64>,
}

/// Fit one model per fold (warm-started from `start` if given) and predict
/// each held-out row.
pub fn cv_fit<L: Learner>(
    learner: &L,
    data: &Dataset,
    plan: &FoldPlan,
    scenario: Scenario,
    start: Option<&L::Model>,
) -> Result<CvFit<L::Model>> {
    if plan.n() != data.n() {
        return Err(Error::InvalidArgument(format!(
            "fold plan covers {} rows, dataset has {}",
            plan.n(),
            data.n()
        )));
    }
    let fits: Vec<Result<L::Model>> = (0..plan.k())
        .into_par_iter()
        .map(|k| {
            let train = data.subset(&plan.train_rows(k));
            match start {
                Some(m) => learner.fit_warm(&train, m),
                None => learner.fit(&train),
            }
        })
        .collect();
    let mut models = Vec::with_capacity(plan.k());
    for (k, f) in fits.into_iter().enumerate() {
        models.push(f.map_err(|e| e.in_fold(k + 1))?);
    }
    let eta_cv = held_out_predictions(learner, &models, data, plan, scenario)?;
    Ok(CvFit { models, eta_cv })
}

/// η̂_i^cv from already fitted fold models.
pub fn held_out_predictions<L: Learner>(
    learner: &L,
    models: &[L::Model],
    data: &Dataset,
    plan: &FoldPlan,
    scenario: Scenario,
) -> Result<DVector<f64>> {
    let mut eta = DVector::zeros(data.n());
    let mut row = vec![0.0; data.p()];
    for i in 0..data.n() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = data.x()[(i, j)];
        }
        let k = plan.fold_of()[i];
        eta[i] = learner
            .predict(&models[k], &row, scenario.mode(data, i))
            .map_err(|e| e.in_fold(k + 1))?;
    }
    Ok(eta)
}

/// Outcome of one cross-validation run for one loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub loss: Loss,
    pub cv_value: f64,
    pub per_fold_losses: Vec<f64>,
    /// ŷ_i^cv in the loss's prediction space.
    pub cv_predictions: Vec<f64>,
    pub losses: Vec<f64>,
    /// 0-based fold of each row.
    pub fold_of: Vec<usize>,
    pub y: Vec<f64>,
}

impl CvReport {
    /// Evaluate `loss` on held-out linear predictors.
    pub fn from_predictions(
        loss: Loss,
        link: Link,
        data: &Dataset,
        plan: &FoldPlan,
        eta_cv: &DVector<f64>,
    ) -> Result<Self> {
        let n = data.n();
        let mut preds = Vec::with_capacity(n);
        let mut losses = Vec::with_capacity(n);
        let mut fold_sum = vec![0.0; plan.k()];
        for i in 0..n {
            let yhat = loss.prediction(eta_cv[i], link);
            let l = loss.eval(data.y()[i], yhat)?;
            preds.push(yhat);
            losses.push(l);
            fold_sum[plan.fold_of()[i]] += l;
        }
        let sizes = plan.sizes();
        Ok(Self {
            loss,
            cv_value: losses.iter().sum::<f64>() / n as f64,
            per_fold_losses: fold_sum.iter().zip(&sizes).map(|(s, &m)| s / m as f64).collect(),
            cv_predictions: preds,
            losses,
            fold_of: plan.fold_of().to_vec(),
            y: data.y().iter().copied().collect(),
        })
    }

    /// Per-observation CSV: `i, fold, y, yhat_cv, loss` with 1-based ids.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(["i", "fold", "y", "yhat_cv", "loss"]).map_err(io)?;
        for i in 0..self.y.len() {
            out.write_record(&[
                (i + 1).to_string(),
                (self.fold_of[i] + 1).to_string(),
                crate::io::fmt_f64(self.y[i]),
                crate::io::fmt_f64(self.cv_predictions[i]),
                crate::io::fmt_f64(self.losses[i]),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Standard K-fold cross-validation of `learner` under `loss`.
pub fn cross_validate<L: Learner>(
    learner: &L,
    data: &Dataset,
    plan: &FoldPlan,
    loss: Loss,
    scenario: Scenario,
) -> Result<CvReport> {
    let fit = cv_fit(learner, data, plan, scenario, None)?;
    CvReport::from_predictions(loss, learner.link(), data, plan, &fit.eta_cv)
}

/// Realized random effects and law of a simulated training set.
#[derive(Debug, Clone)]
pub enum TrueEffects {
    None,
    Clustered {
        sigma_u: f64,
        sigma_s: f64,
        u: DVector<f64>,
        s: DVector<f64>,
    },
    Spatial {
        kernel: KernelParams,
        /// Square-root factor of the field covariance on the training sites.
        factor: DMatrix<f64>,
    },
}

/// Generative law of a simulated training set, used to draw test responses.
#[derive(Debug, Clone)]
pub struct GenerativeTruth {
    pub family: ModelFamily,
    /// Fixed part of the linear predictor on each training row.
    pub fixed: DVector<f64>,
    pub effects: TrueEffects,
}

impl GenerativeTruth {
    pub fn spatial(family: ModelFamily, fixed: DVector<f64>, kernel: KernelParams, coords: &[[f64; 2]]) -> Self {
        let factor = psd_factor(&kernel.matrix(coords));
        Self {
            family,
            fixed,
            effects: TrueEffects::Spatial { kernel, factor },
        }
    }

    /// Fresh responses on the training covariates. New entities and days are
    /// drawn for `NewAll`; `SharedEntities` keeps the realized entity effects
    /// and redraws days. Spatial data always get a fresh field.
    pub fn draw_test<R: rand::Rng + ?Sized>(
        &self,
        data: &Dataset,
        scenario: Scenario,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let n = data.n();
        if self.fixed.len() != n {
            return Err(Error::InvalidArgument("generative truth does not match the dataset".into()));
        }
        let mut eta = self.fixed.clone();
        match &self.effects {
            TrueEffects::None => {}
            TrueEffects::Clustered {
                sigma_u,
                sigma_s,
                u,
                ..
            } => {
                let c = data
                    .clusters()
                    .ok_or_else(|| Error::InvalidArgument("clustered truth needs a cluster index".into()))?;
                let uu: Vec<f64> = match scenario {
                    Scenario::NewAll => (0..c.q1()).map(|_| sigma_u * rng::normal(rng)).collect(),
                    Scenario::SharedEntities => u.iter().copied().collect(),
                };
                let ss: Vec<f64> = (0..c.q2()).map(|_| sigma_s * rng::normal(rng)).collect();
                for i in 0..n {
                    eta[i] += uu[c.entity()[i]] + ss[c.day()[i]];
                }
            }
            TrueEffects::Spatial { factor, .. } => {
                let z = DVector::from_fn(factor.ncols(), |_, _| rng::normal(rng));
                eta += factor * z;
            }
        }
        Ok(DVector::from_vec(self.family.sample(eta.as_slice(), rng)))
    }
}

/// Monte-Carlo GenErr of fixed held-out predictions: mean loss against
/// `reps` fresh test-response draws, one value per loss.
#[allow(clippy::too_many_arguments)]
pub fn generalization_error_from_predictions(
    truth: &GenerativeTruth,
    data: &Dataset,
    eta_cv: &DVector<f64>,
    link: Link,
    losses: &[Loss],
    scenario: Scenario,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if reps == 0 {
        return Err(Error::InvalidArgument("at least one test draw is required".into()));
    }
    let n = data.n();
    let preds: Vec<Vec<f64>> = losses
        .iter()
        .map(|l| (0..n).map(|i| l.prediction(eta_cv[i], link)).collect())
        .collect();
    let mut totals = vec![0.0; losses.len()];
    for r in 0..reps {
        let y = truth.draw_test(data, scenario, &mut rng::stream(seed, domain::TEST_RESPONSES, r as u64))?;
        for (t, (loss, p)) in totals.iter_mut().zip(losses.iter().zip(&preds)) {
            for i in 0..n {
                *t += loss.eval(y[i], p[i])?;
            }
        }
    }
    Ok(totals.into_iter().map(|t| t / (reps * n) as f64).collect())
}

/// Monte-Carlo GenErr of `learner` under the fold plan.
#[allow(clippy::too_many_arguments)]
pub fn generalization_error_mc<L: Learner>(
    truth: &GenerativeTruth,
    learner: &L,
    data: &Dataset,
    plan: &FoldPlan,
    loss: Loss,
    scenario: Scenario,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    let fit = cv_fit(learner, data, plan, scenario, None)?;
    let v = generalization_error_from_predictions(truth, data, &fit.eta_cv, learner.link(), &[loss], scenario, reps, seed)?;
    Ok(v[0])
}
