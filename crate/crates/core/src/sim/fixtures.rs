//! Small Gaussian-identity fixtures with known variance components, and a
//! brute-force generative Monte Carlo for w_cv.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::lmm_analytic_wcv;
use crate::cv::{cv_fit, FoldPlan, GenerativeTruth, Scenario, TrueEffects};
use crate::error::{Error, Result};
use crate::glmm::{FitReport, FittedGlmm, FixedComponentsLearner, VarianceComponents};
use crate::model::{ClusterIndex, Dataset, ModelFamily};
use crate::rng::{domain, normal, stream};

/// A dataset with a fold plan and a fit whose parameters equal the law
/// that generated the responses.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub data: Dataset,
    pub plan: FoldPlan,
    pub fit: FittedGlmm,
    pub truth: GenerativeTruth,
}

pub const FIXTURES: [&str; 2] = ["lmm_small", "lmm_n24"];

fn build(
    name: &'static str,
    x: DMatrix<f64>,
    c: ClusterIndex,
    beta: Vec<f64>,
    sigma_u_sq: f64,
    sigma_s_sq: f64,
    plan: FoldPlan,
    seed: u64,
) -> Result<Fixture> {
    let family = ModelFamily::gaussian(1.0);
    let beta = DVector::from_vec(beta);
    let fixed = &x * &beta;
    let truth = GenerativeTruth {
        family,
        fixed,
        effects: TrueEffects::Clustered {
            sigma_u: sigma_u_sq.sqrt(),
            sigma_s: sigma_s_sq.sqrt(),
            u: DVector::zeros(c.q1()),
            s: DVector::zeros(c.q2()),
        },
    };
    let (q1, q2) = (c.q1(), c.q2());
    let placeholder = Dataset::new(x.clone(), DVector::zeros(x.nrows()))?.with_clusters(c)?;
    let y = truth.draw_test(&placeholder, Scenario::NewAll, &mut stream(seed, domain::GENERATE, 1))?;
    let data = placeholder.with_response(y)?;
    let fit = FittedGlmm {
        family,
        beta,
        components: VarianceComponents::Clustered {
            sigma_u_sq,
            sigma_s_sq,
        },
        u_hat: DVector::zeros(q1),
        s_hat: DVector::zeros(q2),
        report: FitReport {
            method: "fixture".into(),
            iterations: 0,
            converged: true,
            gradient_norm: 0.0,
            objective: f64::NAN,
        },
    };
    Ok(Fixture {
        name,
        data,
        plan,
        fit,
        truth,
    })
}

/// n = 8: two entities over four days, one day per fold.
pub fn lmm_small() -> Fixture {
    let n = 8;
    let xs = [-1.5, 0.3, -0.5, -0.8, 0.5, 1.1, 1.5, -0.2];
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let c = ClusterIndex::new((0..n).map(|i| i % 2).collect(), (0..n).map(|i| i / 2).collect(), 2, 4)
        .expect("valid index");
    let plan = FoldPlan::from_assignment((0..n).map(|i| i / 2).collect(), 4).expect("valid plan");
    build("lmm_small", x, c, vec![0.5, 1.0], 1.0, 0.25, plan, 8).expect("valid fixture")
}

/// n = 24: four entities by three days, two rows per cell, four random folds.
pub fn lmm_n24() -> Fixture {
    let n = 24;
    let mut r = stream(11, domain::GENERATE, 0);
    let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { normal(&mut r) });
    let c = ClusterIndex::new((0..n).map(|i| (i / 2) % 4).collect(), (0..n).map(|i| i / 8).collect(), 4, 3)
        .expect("valid index");
    let plan = crate::cv::make_folds(n, 4, 11).expect("valid plan");
    build("lmm_n24", x, c, vec![1.0, 0.5, -0.5], 0.8, 0.5, plan, 11).expect("valid fixture")
}

pub fn by_name(name: &str) -> Result<Fixture> {
    match name {
        "lmm_small" => Ok(lmm_small()),
        "lmm_n24" => Ok(lmm_n24()),
        _ => Err(Error::InvalidArgument(format!(
            "unknown fixture '{name}' (expected one of {})",
            FIXTURES.join(", ")
        ))),
    }
}

/// Closed-form and brute-force w_cv on a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub fixture: String,
    pub analytic: f64,
    pub brute_force: f64,
    pub mc_se: f64,
    pub reps: usize,
}

/// (2/n) Σ_i Cov(ŷ_i^cv, y_i) by simulating whole training sets from the
/// fixture's law (new entities and days each time) and rerunning
/// cross-validation with the variance components held at their true values.
pub fn brute_force_wcv(fx: &Fixture, reps: usize, seed: u64) -> Result<(f64, f64)> {
    if reps < 2 {
        return Err(Error::InvalidArgument("at least two replications are required".into()));
    }
    let n = fx.data.n();
    let learner = FixedComponentsLearner::from_fit(&fx.fit);
    let sims: Vec<(DVector<f64>, DVector<f64>)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let y = fx
                .truth
                .draw_test(&fx.data, Scenario::NewAll, &mut stream(seed, domain::ORACLE, r as u64))?;
            let d = fx.data.with_response(y.clone())?;
            let eta = cv_fit(&learner, &d, &fx.plan, Scenario::NewAll, None)?.eta_cv;
            Ok((eta, y))
        })
        .collect::<Result<_>>()?;
    let rf = reps as f64;
    let mut eta_bar = DVector::zeros(n);
    let mut y_bar = DVector::zeros(n);
    for (e, y) in &sims {
        eta_bar += e;
        y_bar += y;
    }
    eta_bar /= rf;
    y_bar /= rf;
    let c: Vec<f64> = sims
        .iter()
        .map(|(e, y)| {
            let s: f64 = (0..n).map(|i| (e[i] - eta_bar[i]) * (y[i] - y_bar[i])).sum();
            2.0 * s / n as f64 * rf / (rf - 1.0)
        })
        .collect();
    Ok(crate::bias::mean_se(&c))
}

pub fn oracle(fx: &Fixture, reps: usize, seed: u64) -> Result<OracleResult> {
    let analytic = lmm_analytic_wcv(&fx.data, &fx.fit, &fx.plan, Scenario::NewAll)?.w_cv;
    let (brute_force, mc_se) = brute_force_wcv(fx, reps, seed)?;
    Ok(OracleResult {
        fixture: fx.name.to_string(),
        analytic,
        brute_force,
        mc_se,
        reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_well_formed() {
        let s = lmm_small();
        assert_eq!((s.data.n(), s.data.p(), s.plan.k()), (8, 2, 4));
        let m = lmm_n24();
        let c = m.data.clusters().unwrap();
        assert_eq!((m.data.n(), c.q1(), c.q2()), (24, 4, 3));
        for e in 0..4 {
            for d in 0..3 {
                assert_eq!((0..24).filter(|&i| c.entity()[i] == e && c.day()[i] == d).count(), 2);
            }
        }
        assert!(by_name("nope").unwrap_err().is_config_error());
    }

    #[test]
    fn small_oracle_agrees() {
        let r = oracle(&lmm_small(), 4000, 1).unwrap();
        assert!(r.analytic > 0.0);
        assert!((r.analytic - r.brute_force).abs() < 4.0 * r.mc_se, "{r:?}");
    }
}
