use nalgebra::{DMatrix, DVector};

use super::moments::MarginalMoments;
use crate::cv::FoldPlan;
use crate::error::{Error, Result};
use crate::glmm::{effects_step, FittedGlmm, VarianceComponents};
use crate::linalg::{scale_rows, select_block, select_rows, select_vec, SpdFactor};
use crate::model::{ClusterIndex, Dataset};

/// One-step refit operators of fold k.
#[derive(Debug, Clone)]
pub struct FoldProjector {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// P_k = (X_{-k}ᵀ D V⁻¹ D X_{-k})⁻¹ X_{-k}ᵀ D V⁻¹, p × n_{-k}.
    pub p: DMatrix<f64>,
    /// H_k = X_k P_k, so that η̃_k = X_k β̂ + H_k (Y_{-k} − μ_{-k}).
    pub h: DMatrix<f64>,
    x_train: DMatrix<f64>,
    clusters: Option<ClusterIndex>,
}

/// Fold projectors for the quasi-score Taylor approximation of refitting:
/// β̃_{-k} = β̂ + P_k (Y_{-k} − μ_{-k}).
#[derive(Debug, Clone)]
pub struct TaylorProjector {
    pub beta: DVector<f64>,
    pub mu: DVector<f64>,
    pub folds: Vec<FoldProjector>,
    fixed: DVector<f64>,
}

impl TaylorProjector {
    pub fn new(data: &Dataset, beta: &DVector<f64>, mm: &MarginalMoments, plan: &FoldPlan) -> Result<Self> {
        if mm.mu.len() != data.n() || plan.n() != data.n() {
            return Err(Error::InvalidArgument("moments, folds and dataset disagree in size".into()));
        }
        if beta.len() != data.p() {
            return Err(Error::InvalidArgument("coefficient length mismatch".into()));
        }
        let mut folds = Vec::with_capacity(plan.k());
        for k in 0..plan.k() {
            let train = plan.train_rows(k);
            let test = plan.test_rows(k);
            let x_train = select_rows(data.x(), &train);
            let dx = scale_rows(&x_train, &select_vec(&mm.d, &train));
            let v = select_block(&mm.v, &train, &train);
            let w = SpdFactor::new(&v, "marginal covariance")
                .map_err(|e| e.in_fold(k + 1))?
                .solve_mat(&dx);
            let info = w.tr_mul(&dx);
            let p = SpdFactor::new(&info, "quasi-information")
                .map_err(|e| e.in_fold(k + 1))?
                .solve_mat(&w.transpose());
            let h = select_rows(data.x(), &test) * &p;
            folds.push(FoldProjector {
                train,
                test,
                p,
                h,
                x_train,
                clusters: data.clusters().map(|c| c.subset(&plan.train_rows(k))),
            });
        }
        Ok(Self {
            beta: beta.clone(),
            mu: mm.mu.clone(),
            folds,
            fixed: data.x() * beta,
        })
    }

    fn centered(&self, fold: &FoldProjector, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(fold.train.len(), |j, _| y[fold.train[j]] - self.mu[fold.train[j]])
    }

    /// β̃_{-k} for full-length responses `y` (entries of fold k are ignored).
    pub fn taylor_beta(&self, k: usize, y: &DVector<f64>) -> DVector<f64> {
        let f = &self.folds[k];
        &self.beta + &f.p * self.centered(f, y)
    }

    /// Held-out fixed-part predictions x_iᵀβ̃_{-k(i)} for every row.
    pub fn eta_cv(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut eta = self.fixed.clone();
        for f in &self.folds {
            let shift = &f.h * self.centered(f, y);
            for (j, &i) in f.test.iter().enumerate() {
                eta[i] += shift[j];
            }
        }
        eta
    }

    /// Row weights h_i = P_kᵀ x_i over the training rows of i's fold, so that
    /// η̃_i = x_iᵀβ̂ + h_iᵀ(Y_{-k} − μ_{-k}).
    pub fn weights(&self, k: usize, j: usize) -> DVector<f64> {
        self.folds[k].h.row(j).transpose()
    }
}

/// One Newton step for the random effects of fold k's training rows,
/// starting at the generating effects (u_b, s_b) with fixed part X β̃:
/// η̃ = η_b + H⁻¹ S(η_b). Returns zeros and `true` when every component is 0.
pub fn taylor_eta(
    fit: &FittedGlmm,
    fold: &FoldProjector,
    y: &DVector<f64>,
    beta_tilde: &DVector<f64>,
    u_b: &DVector<f64>,
    s_b: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, bool)> {
    let VarianceComponents::Clustered {
        sigma_u_sq,
        sigma_s_sq,
    } = fit.components
    else {
        return Err(Error::Unsupported("random-effect Taylor steps need clustered components".into()));
    };
    let c = fold
        .clusters
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("clustered data required".into()))?;
    if sigma_u_sq == 0.0 && sigma_s_sq == 0.0 {
        return Ok((DVector::zeros(c.q1()), DVector::zeros(c.q2()), true));
    }
    let offset = &fold.x_train * beta_tilde;
    let y_train = select_vec(y, &fold.train);
    let zero_u = DVector::zeros(c.q1());
    let zero_s = DVector::zeros(c.q2());
    // Inactive components contribute nothing to the linear predictor.
    let u0 = if sigma_u_sq > 0.0 { u_b } else { &zero_u };
    let s0 = if sigma_s_sq > 0.0 { s_b } else { &zero_s };
    let (u, s) = effects_step(&fit.family, c, &y_train, &offset, sigma_u_sq, sigma_s_sq, u0, s0)?;
    Ok((u, s, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::marginal_moments;
    use crate::cv::make_folds;
    use crate::glmm::{fit_gls, FitReport};
    use crate::model::ModelFamily;
    use crate::rng;

    fn clustered(n: usize, seed: u64) -> Dataset {
        let mut r = rng::stream(seed, 0, 0);
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng::normal(&mut r) });
        let y = DVector::from_fn(n, |_, _| rng::normal(&mut r));
        let c = ClusterIndex::new((0..n).map(|i| i % 3).collect(), (0..n).map(|i| (i / 3) % 4).collect(), 3, 4).unwrap();
        Dataset::new(x, y).unwrap().with_clusters(c).unwrap()
    }

    fn gaussian_fit(beta: DVector<f64>, su: f64, ss: f64) -> FittedGlmm {
        FittedGlmm {
            family: ModelFamily::gaussian(0.7),
            beta,
            components: VarianceComponents::Clustered {
                sigma_u_sq: su,
                sigma_s_sq: ss,
            },
            u_hat: DVector::zeros(3),
            s_hat: DVector::zeros(4),
            report: FitReport::new("fixed"),
        }
    }

    #[test]
    fn gaussian_step_is_gls_and_blup() {
        let d = clustered(24, 1);
        let beta = DVector::from_vec(vec![0.3, -0.2]);
        let fit = gaussian_fit(beta.clone(), 0.6, 0.4);
        let mm = marginal_moments(&beta, &fit, &d, 2, 0).unwrap();
        let plan = make_folds(24, 4, 2).unwrap();
        let tp = TaylorProjector::new(&d, &beta, &mm, &plan).unwrap();
        for k in 0..4 {
            let train = d.subset(&plan.train_rows(k));
            let gls = fit_gls(&train, fit.components, 0.7).unwrap();
            let bt = tp.taylor_beta(k, d.y());
            assert!((&bt - &gls.beta).abs().max() < 1e-10);
            let u_b = DVector::from_vec(vec![0.5, -1.0, 2.0]);
            let s_b = DVector::from_vec(vec![0.1, 0.0, -0.3, 1.0]);
            let (u, s, flag) = taylor_eta(&fit, &tp.folds[k], d.y(), &bt, &u_b, &s_b).unwrap();
            assert!(!flag);
            assert!((&u - &gls.u_hat).abs().max() < 1e-10, "{u} {}", gls.u_hat);
            assert!((&s - &gls.s_hat).abs().max() < 1e-10);
        }
    }

    #[test]
    fn test_fold_responses_do_not_matter() {
        let d = clustered(24, 4);
        let beta = DVector::from_vec(vec![0.3, -0.2]);
        let fit = gaussian_fit(beta.clone(), 0.6, 0.4);
        let mm = marginal_moments(&beta, &fit, &d, 2, 0).unwrap();
        let plan = make_folds(24, 3, 5).unwrap();
        let tp = TaylorProjector::new(&d, &beta, &mm, &plan).unwrap();
        let mut y = d.y().clone();
        for i in plan.test_rows(1) {
            y[i] += 100.0;
        }
        assert_eq!(tp.taylor_beta(1, d.y()), tp.taylor_beta(1, &y));
    }

    #[test]
    fn zero_components_flagged() {
        let d = clustered(24, 2);
        let beta = DVector::from_vec(vec![0.0, 0.0]);
        let fit = gaussian_fit(beta.clone(), 0.0, 0.0);
        let mm = marginal_moments(&beta, &fit, &d, 2, 0).unwrap();
        let plan = make_folds(24, 3, 5).unwrap();
        let tp = TaylorProjector::new(&d, &beta, &mm, &plan).unwrap();
        let (u, _, flag) = taylor_eta(&fit, &tp.folds[0], d.y(), &beta, &DVector::zeros(3), &DVector::zeros(4)).unwrap();
        assert!(flag);
        assert_eq!(u, DVector::zeros(3));
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let d = clustered(24, 3);
        let x = DMatrix::from_fn(24, 3, |i, j| d.x()[(i, j.min(1))]);
        let d = d.with_covariates(x).unwrap();
        let beta = DVector::zeros(3);
        let fit = gaussian_fit(beta.clone(), 0.5, 0.5);
        let mm = marginal_moments(&beta, &fit, &d, 2, 0).unwrap();
        let plan = make_folds(24, 3, 5).unwrap();
        let err = TaylorProjector::new(&d, &beta, &mm, &plan).unwrap_err();
        assert!(matches!(err, Error::Fold { ref source, .. } if matches!(**source, Error::RankDeficient(_))), "{err}");
    }
}
