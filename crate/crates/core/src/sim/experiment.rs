use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::generate::{generate, SimData};
use crate::bias::{
    canonical_c_tilde, empirical_draws, estimate_from_draws, fast_draws, marginal_moments, BiasEstimate, Estimator,
    MarginalMoments,
};
use crate::cv::{cv_fit, generalization_error_from_predictions, make_folds, CvReport, FoldPlan};
use crate::error::{Error, Result};
use crate::glmm::{GlmmLearner, Learner};
use crate::io::fmt_f64;
use crate::model::{Distribution, Loss};
use crate::rng::{derive_seed, domain, stream};
use crate::roc::{correct_roc, roc_curve, threshold_grid, wcv_pr};

/// One (repetition, model, loss) row. `cv_c_*` are `cv + w_*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    /// 0-based repetition.
    pub rep: usize,
    /// Covariates used by the model.
    pub model: usize,
    pub loss: Loss,
    pub cv: f64,
    pub w_hat: Option<f64>,
    pub w_tilde: Option<f64>,
    pub w_canonical: Option<f64>,
    pub cv_c_hat: Option<f64>,
    pub cv_c_tilde: Option<f64>,
    pub cv_c_canonical: Option<f64>,
    pub mc_se_hat: Option<f64>,
    pub mc_se_tilde: Option<f64>,
    pub gen_err: f64,
    /// The fitted random-effect law was degenerate (all w set to 0).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub rep: usize,
    pub model: usize,
    pub auc: f64,
    pub auc_c: Option<f64>,
    /// Mean AUC of the held-out scores against fresh test responses.
    pub auc_oracle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ExperimentRow>,
    pub roc_rows: Vec<RocRow>,
    pub failures: Vec<RepFailure>,
}

struct RepOutput {
    rows: Vec<ExperimentRow>,
    roc: Vec<RocRow>,
}

fn model_columns(cfg: &ExperimentConfig, m: usize) -> Vec<usize> {
    let offset = cfg.sim.intercept.is_some() as usize;
    (0..offset + m).collect()
}

fn add(cv: f64, w: &Option<BiasEstimate>) -> Option<f64> {
    w.as_ref().map(|w| cv + w.w_cv)
}

fn run_model(
    cfg: &ExperimentConfig,
    sim: &SimData,
    plan: &FoldPlan,
    rep: usize,
    m: usize,
    seed: u64,
) -> Result<(Vec<ExperimentRow>, Option<RocRow>)> {
    let scenario = cfg.sim.scenario;
    let family = cfg.sim.family();
    let data = sim.data.select_columns(&model_columns(cfg, m))?;
    let learner = GlmmLearner::new(family);
    let link = learner.link();
    let fit = learner.fit(&data)?;
    let eta_cv = cv_fit(&learner, &data, plan, scenario, None)?.eta_cv;
    // Common random numbers: every model sees the same test responses.
    let gen_seed = derive_seed(seed, domain::TEST_RESPONSES, 0);
    let gen_err = generalization_error_from_predictions(
        &sim.truth,
        &data,
        &eta_cv,
        link,
        &cfg.losses,
        scenario,
        cfg.sim.test_reps,
        gen_seed,
    )?;

    let bcfg = crate::bias::BootstrapConfig { seed, ..cfg.bootstrap };
    let wants = |e: Estimator| cfg.estimators.contains(&e);
    let empirical = if wants(Estimator::Empirical) {
        Some(empirical_draws(&learner, &data, plan, &fit, &bcfg, scenario)?)
    } else {
        None
    };
    let mm: Option<MarginalMoments> = if wants(Estimator::Fast) || wants(Estimator::Canonical) {
        Some(marginal_moments(&fit.beta, &fit, &data, bcfg.moment_draws, seed)?)
    } else {
        None
    };
    let fast = match (&mm, wants(Estimator::Fast)) {
        (Some(mm), true) => Some(fast_draws(&data, plan, &fit, mm, &bcfg, scenario)?),
        _ => None,
    };

    let mut rows = Vec::with_capacity(cfg.losses.len());
    for (&loss, &ge) in cfg.losses.iter().zip(&gen_err) {
        let cv = CvReport::from_predictions(loss, link, &data, plan, &eta_cv)?.cv_value;
        let estimate = |d: &Option<crate::bias::ReplicateDraws>| -> Result<Option<BiasEstimate>> {
            d.as_ref()
                .map(|d| estimate_from_draws(d, Some(loss), |e| loss.l2_at(e, link)))
                .transpose()
        };
        let hat = estimate(&empirical)?;
        let tilde = estimate(&fast)?;
        let canonical = match (&mm, wants(Estimator::Canonical)) {
            (Some(mm), true) => match canonical_c_tilde(&data, plan, loss, &fit, mm, &bcfg, scenario) {
                Ok(e) => Some(e),
                Err(Error::Unsupported(_)) => None,
                Err(e) => return Err(e),
            },
            _ => None,
        };
        let degenerate = [&hat, &tilde, &canonical].iter().any(|e| e.as_ref().is_some_and(|e| e.degenerate));
        rows.push(ExperimentRow {
            rep,
            model: m,
            loss,
            cv,
            w_hat: hat.as_ref().map(|e| e.w_cv),
            w_tilde: tilde.as_ref().map(|e| e.w_cv),
            w_canonical: canonical.as_ref().map(|e| e.w_cv),
            cv_c_hat: add(cv, &hat),
            cv_c_tilde: add(cv, &tilde),
            cv_c_canonical: add(cv, &canonical),
            mc_se_hat: hat.as_ref().map(|e| e.mc_se),
            mc_se_tilde: tilde.as_ref().map(|e| e.mc_se),
            gen_err: ge,
            degenerate,
        });
    }

    let roc = if cfg.roc && family.distribution == Distribution::Bernoulli {
        let grid = threshold_grid(cfg.roc_grid);
        let scores: Vec<f64> = eta_cv.iter().map(|&e| link.mean(e)).collect();
        let y: Vec<f64> = data.y().iter().copied().collect();
        let curve = roc_curve(&y, &scores, &grid)?;
        let auc_c = match fast.as_ref().or(empirical.as_ref()) {
            Some(d) => {
                let w: Vec<f64> = wcv_pr(d, &grid)?.iter().map(|e| e.w_cv).collect();
                correct_roc(&curve, &w)?.auc_c
            }
            None => None,
        };
        let mut aucs = Vec::with_capacity(cfg.sim.test_reps);
        for r in 0..cfg.sim.test_reps {
            let yt = sim
                .truth
                .draw_test(&data, scenario, &mut stream(gen_seed, domain::TEST_RESPONSES, r as u64))?;
            let yt: Vec<f64> = yt.iter().copied().collect();
            if let Ok(c) = roc_curve(&yt, &scores, &grid) {
                aucs.push(c.auc);
            }
        }
        let auc_oracle = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
        Some(RocRow {
            rep,
            model: m,
            auc: curve.auc,
            auc_c,
            auc_oracle,
        })
    } else {
        None
    };
    Ok((rows, roc))
}

fn run_rep(cfg: &ExperimentConfig, rep: usize) -> Result<RepOutput> {
    let seed = derive_seed(cfg.sim.seed, domain::REPETITION, rep as u64);
    let sim = generate(&cfg.sim, &mut stream(seed, domain::GENERATE, 0))?;
    let plan = make_folds(sim.data.n(), cfg.sim.k_folds, seed)?;
    let mut out = RepOutput {
        rows: Vec::new(),
        roc: Vec::new(),
    };
    for m in cfg.models() {
        let (rows, roc) = run_model(cfg, &sim, &plan, rep, m, seed)?;
        out.rows.extend(rows);
        out.roc.extend(roc);
    }
    Ok(out)
}

/// Run `cfg.sim.reps` independent repetitions in parallel. A failed
/// repetition is recorded and skipped; more than 5% failures abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let reps = cfg.sim.reps;
    let results: Vec<Result<RepOutput>> = (0..reps).into_par_iter().map(|r| run_rep(cfg, r)).collect();
    let mut report = ExperimentReport {
        config: cfg.clone(),
        rows: Vec::new(),
        roc_rows: Vec::new(),
        failures: Vec::new(),
    };
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => {
                report.rows.extend(o.rows);
                report.roc_rows.extend(o.roc);
            }
            Err(e) => report.failures.push(RepFailure {
                rep,
                message: e.to_string(),
            }),
        }
    }
    if report.failures.len() * 20 > reps {
        return Err(Error::TooManyFailures {
            failed: report.failures.len(),
            total: reps,
            first: report.failures[0].message.clone(),
        });
    }
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl ExperimentReport {
    pub fn successful_reps(&self) -> usize {
        self.config.sim.reps - self.failures.len()
    }

    /// Per-repetition CSV (1-based `rep`); estimators that were not run
    /// leave empty cells.
    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record([
            "rep",
            "model",
            "loss",
            "cv",
            "w_hat",
            "w_tilde",
            "w_canonical",
            "cv_c_hat",
            "cv_c_tilde",
            "cv_c_canonical",
            "mc_se_hat",
            "mc_se_tilde",
            "gen_err",
            "degenerate",
        ])
        .map_err(io)?;
        for r in &self.rows {
            out.write_record([
                (r.rep + 1).to_string(),
                r.model.to_string(),
                r.loss.name().to_string(),
                fmt_f64(r.cv),
                opt(r.w_hat),
                opt(r.w_tilde),
                opt(r.w_canonical),
                opt(r.cv_c_hat),
                opt(r.cv_c_tilde),
                opt(r.cv_c_canonical),
                opt(r.mc_se_hat),
                opt(r.mc_se_tilde),
                fmt_f64(r.gen_err),
                r.degenerate.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_roc_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(["rep", "model", "auc", "auc_c", "auc_oracle"]).map_err(io)?;
        for r in &self.roc_rows {
            out.write_record([
                (r.rep + 1).to_string(),
                r.model.to_string(),
                fmt_f64(r.auc),
                opt(r.auc_c),
                opt(r.auc_oracle),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}
