use nalgebra::{DMatrix, DVector};

use super::law::EffectLaw;
use crate::error::{Error, Result};
use crate::glmm::FittedGlmm;
use crate::linalg::{psd_clip, SpdFactor};
use crate::model::Dataset;
use crate::rng::{self, domain};

/// Marginal mean μ = E[y], mean derivative D = E[g'(η)] and covariance
/// V = Cov(y) of the responses under a fitted mixed model, integrating over
/// the random effects.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMoments {
    pub mu: DVector<f64>,
    pub d: DVector<f64>,
    pub v: DMatrix<f64>,
    /// Smallest eigenvalue of V before clipping to the PSD cone.
    pub min_eigenvalue: f64,
    /// Exact (closed form) rather than Monte Carlo.
    pub exact: bool,
}

/// Moments at fixed effects `beta`. Gaussian-identity fits and fits without
/// random effects are handled exactly; otherwise `draws` random-effect
/// draws from the fitted law are averaged.
pub fn marginal_moments(
    beta: &DVector<f64>,
    fit: &FittedGlmm,
    data: &Dataset,
    draws: usize,
    seed: u64,
) -> Result<MarginalMoments> {
    if beta.len() != data.p() {
        return Err(Error::InvalidArgument(format!(
            "beta has {} entries, X has {} columns",
            beta.len(),
            data.p()
        )));
    }
    let n = data.n();
    let family = fit.family;
    let link = family.link;
    let fixed = data.x() * beta;
    let law = EffectLaw::fitted(fit, data)?;

    if family.is_gaussian_identity() {
        let mut v = match &law {
            EffectLaw::None => DMatrix::zeros(n, n),
            EffectLaw::Clustered { sigma_u, sigma_s } => data
                .clusters()
                .expect("clustered law")
                .covariance(sigma_u * sigma_u, sigma_s * sigma_s),
            EffectLaw::Spatial { factor } => factor * factor.transpose(),
        };
        for i in 0..n {
            v[(i, i)] += family.phi;
        }
        let (v, min) = psd_clip(&v);
        return Ok(MarginalMoments {
            mu: fixed,
            d: DVector::from_element(n, 1.0),
            v,
            min_eigenvalue: min,
            exact: true,
        });
    }

    if law.is_zero() {
        let mu = fixed.map(|e| link.mean(e));
        let d = fixed.map(|e| link.mean_derivative(e));
        let v = DMatrix::from_diagonal(&mu.map(|m| family.phi * family.variance(m)));
        let min = v.diagonal().min();
        return Ok(MarginalMoments {
            mu,
            d,
            v,
            min_eigenvalue: min,
            exact: true,
        });
    }

    if draws < 2 {
        return Err(Error::InvalidArgument("at least two moment draws are required".into()));
    }
    let mut r = rng::stream(seed, domain::MOMENTS, 0);
    let mut g = DMatrix::zeros(n, draws);
    let mut d = DVector::zeros(n);
    let mut cond = DVector::zeros(n);
    for s in 0..draws {
        let delta = law.draw(data, &mut r);
        for i in 0..n {
            let eta = fixed[i] + delta[i];
            let m = link.mean(eta);
            g[(i, s)] = m;
            d[i] += link.mean_derivative(eta);
            cond[i] += family.phi * family.variance(m);
        }
    }
    let inv = 1.0 / draws as f64;
    d *= inv;
    cond *= inv;
    let mu = g.column_mean();
    for s in 0..draws {
        let mut col = g.column_mut(s);
        col -= &mu;
    }
    let mut v = &g * g.transpose() / (draws as f64 - 1.0);
    for i in 0..n {
        v[(i, i)] += cond[i];
    }
    let (v, min) = psd_clip(&v);
    Ok(MarginalMoments {
        mu,
        d,
        v,
        min_eigenvalue: min,
        exact: false,
    })
}

/// Quasi-score Xᵀ D V⁻¹ (Y − μ) of the responses in `data` under `mm`.
pub fn quasi_score(data: &Dataset, mm: &MarginalMoments) -> Result<DVector<f64>> {
    if mm.mu.len() != data.n() {
        return Err(Error::InvalidArgument("moments do not match the dataset".into()));
    }
    let resid = data.y() - &mm.mu;
    let a = SpdFactor::new(&mm.v, "marginal covariance")?.solve_vec(&resid);
    let da = a.component_mul(&mm.d);
    Ok(data.x().tr_mul(&da))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glmm::{FitReport, VarianceComponents};
    use crate::model::{ClusterIndex, ModelFamily};

    fn fit(family: ModelFamily, beta: DVector<f64>, components: VarianceComponents) -> FittedGlmm {
        FittedGlmm {
            family,
            beta,
            components,
            u_hat: DVector::zeros(0),
            s_hat: DVector::zeros(0),
            report: FitReport {
                method: "fixed".into(),
                iterations: 0,
                converged: true,
                gradient_norm: 0.0,
                objective: 0.0,
            },
        }
    }

    fn data(n: usize) -> Dataset {
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i as f64 * 0.37).sin() });
        let y = DVector::from_fn(n, |i, _| (i % 2) as f64);
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn score_is_negative_nll_gradient_without_effects() {
        let d = data(12);
        let beta = DVector::from_vec(vec![0.2, -0.7]);
        let f = fit(ModelFamily::bernoulli_logit(), beta.clone(), VarianceComponents::None);
        let mm = marginal_moments(&beta, &f, &d, 10, 0).unwrap();
        let s = quasi_score(&d, &mm).unwrap();
        let nll = |b: &DVector<f64>| -> f64 {
            (0..d.n())
                .map(|i| {
                    let e = d.x().row(i).dot(&b.transpose());
                    let p = crate::model::family::sigmoid(e);
                    -(d.y()[i] * p.ln() + (1.0 - d.y()[i]) * (1.0 - p).ln())
                })
                .sum()
        };
        for j in 0..2 {
            let h = 1e-6;
            let mut bp = beta.clone();
            bp[j] += h;
            let mut bm = beta.clone();
            bm[j] -= h;
            let fd = (nll(&bp) - nll(&bm)) / (2.0 * h);
            assert!((s[j] + fd).abs() < 1e-6, "{} vs {}", s[j], -fd);
        }
    }

    #[test]
    fn clustered_moments_are_psd_and_share_entities() {
        let n = 20;
        let c = ClusterIndex::new((0..n).map(|i| i % 4).collect(), (0..n).map(|i| i / 4).collect(), 4, 5).unwrap();
        let d = data(n).with_clusters(c).unwrap();
        let beta = DVector::from_vec(vec![0.1, 0.5]);
        let comps = VarianceComponents::Clustered {
            sigma_u_sq: 1.0,
            sigma_s_sq: 0.25,
        };
        let f = fit(ModelFamily::bernoulli_logit(), beta.clone(), comps);
        let mm = marginal_moments(&beta, &f, &d, 2000, 3).unwrap();
        assert!(mm.min_eigenvalue > -1e-8);
        // Same-entity pairs covary, pairs sharing nothing do not.
        assert!(mm.v[(0, 4)] > 0.02);
        assert!(mm.v[(0, 5)].abs() < 0.02);
        assert!(mm.d.iter().all(|&v| v > 0.0 && v <= 0.25));
        let again = marginal_moments(&beta, &f, &d, 2000, 3).unwrap();
        assert_eq!(mm, again);
    }

    #[test]
    fn gaussian_identity_is_exact() {
        let n = 8;
        let c = ClusterIndex::new((0..n).map(|i| i % 2).collect(), (0..n).map(|i| i / 2).collect(), 2, 4).unwrap();
        let d = data(n).with_clusters(c.clone()).unwrap();
        let beta = DVector::from_vec(vec![1.0, 2.0]);
        let comps = VarianceComponents::Clustered {
            sigma_u_sq: 0.5,
            sigma_s_sq: 0.3,
        };
        let f = fit(ModelFamily::gaussian(2.0), beta.clone(), comps);
        let mm = marginal_moments(&beta, &f, &d, 2, 0).unwrap();
        assert!(mm.exact);
        let mut v = c.covariance(0.5, 0.3);
        for i in 0..n {
            v[(i, i)] += 2.0;
        }
        assert!((mm.v - v).abs().max() < 1e-12);
        assert_eq!(mm.mu, d.x() * &beta);
    }
}
