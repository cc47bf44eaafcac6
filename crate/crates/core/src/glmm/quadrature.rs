//! Gauss–Hermite marginal likelihood for a Bernoulli-logit model with a
//! single random intercept.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{FitConfig, FitReport, FittedGlmm, VarianceComponents};
use crate::error::{Error, Result};
use crate::model::family::sigmoid;
use crate::model::{Dataset, ModelFamily};
use crate::optim::bfgs;

/// Nodes ν_k and weights w_k for ∫ f(ν) e^{−ν²} dν ≈ Σ w_k f(ν_k).
#[derive(Debug, Clone, PartialEq)]
pub struct GhQuadrature {
    pub degree: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GhQuadrature {
    pub const DEFAULT_DEGREE: usize = 20;

    /// Golub–Welsch: eigen-decomposition of the Hermite Jacobi matrix.
    pub fn new(degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("quadrature degree must be positive".into()));
        }
        let mut j = DMatrix::zeros(degree, degree);
        for k in 1..degree {
            let b = (k as f64 / 2.0).sqrt();
            j[(k - 1, k)] = b;
            j[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(j);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = (0..degree)
            .map(|k| (eig.eigenvalues[k], sqrt_pi * eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Enforce exact symmetry; the eigen-solver leaves ~1e-15 asymmetry.
        for k in 0..degree / 2 {
            let m = degree - 1 - k;
            let node = 0.5 * (pairs[m].0 - pairs[k].0);
            let weight = 0.5 * (pairs[m].1 + pairs[k].1);
            pairs[k] = (-node, weight);
            pairs[m] = (node, weight);
        }
        if degree % 2 == 1 {
            pairs[degree / 2].0 = 0.0;
        }
        Ok(Self {
            degree,
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }
}

impl Default for GhQuadrature {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DEGREE).expect("positive degree")
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Posterior mode and curvature scale of the random intercept b ~ N(0, σ²)
/// given one group's responses, by damped Newton on the concave log density.
fn laplace_center(fixed_part: &[f64], y: &[f64], sigma: f64) -> (f64, f64) {
    let prec = 1.0 / (sigma * sigma);
    let log_post = |b: f64| -> f64 {
        fixed_part
            .iter()
            .zip(y)
            .map(|(&f, &yl)| yl * (f + b) - softplus(f + b))
            .sum::<f64>()
            - 0.5 * prec * b * b
    };
    let derivs = |b: f64| -> (f64, f64) {
        let mut g = -prec * b;
        let mut h = -prec;
        for (&f, &yl) in fixed_part.iter().zip(y) {
            let p = sigmoid(f + b);
            g += yl - p;
            h -= p * (1.0 - p);
        }
        (g, h)
    };
    let mut b = 0.0;
    for _ in 0..100 {
        let (g, h) = derivs(b);
        let mut step = -g / h;
        let cur = log_post(b);
        while log_post(b + step) < cur && step.abs() > 1e-14 {
            step *= 0.5;
        }
        b += step;
        if step.abs() <= 1e-12 * (1.0 + b.abs()) {
            break;
        }
    }
    (b, (-derivs(b).1).sqrt().recip())
}

/// Adaptive quadrature points b_k = μ + √2 τ ν_k for one group, with their
/// log terms ln w_k + ln(√2 τ) + ν_k² + ln φ(b_k; 0, σ²) + Σ_l [y ζ − ln(1 + e^ζ)],
/// ζ = f_l + b_k. With σ = 0 the single point b = 0 carries all the mass.
fn node_terms(fixed_part: &[f64], y: &[f64], sigma: f64, quad: &GhQuadrature) -> (Vec<f64>, Vec<f64>) {
    let ll = |b: f64| -> f64 {
        fixed_part
            .iter()
            .zip(y)
            .map(|(&f, &yl)| yl * (f + b) - softplus(f + b))
            .sum()
    };
    if sigma <= 0.0 {
        return (vec![0.0], vec![ll(0.0)]);
    }
    let (mu, tau) = laplace_center(fixed_part, y, sigma);
    let scale = std::f64::consts::SQRT_2 * tau;
    let log_norm = sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
    let points: Vec<f64> = quad.nodes.iter().map(|&nu| mu + scale * nu).collect();
    let terms = quad
        .nodes
        .iter()
        .zip(&quad.weights)
        .zip(&points)
        .map(|((&nu, &w), &b)| w.ln() + scale.ln() + nu * nu - 0.5 * (b / sigma).powi(2) - log_norm + ll(b))
        .collect();
    (points, terms)
}

/// Marginal Bernoulli negative log-likelihood of one group,
/// −ln ∫ Π_l p(y_l | f_l + b) φ(b; 0, σ²) db, by Gauss–Hermite quadrature of
/// degree `quad.degree` centered at the posterior mode of b.
pub fn nll_gauss_hermite(fixed_part: &[f64], y: &[f64], sigma_s: f64, quad: &GhQuadrature) -> f64 {
    if fixed_part.is_empty() {
        return 0.0;
    }
    -log_sum_exp(&node_terms(fixed_part, y, sigma_s, quad).1)
}

/// Group value, gradient in (β, ln σ) and posterior mean of the intercept.
/// The quadrature center is held fixed when differentiating; the neglected
/// term vanishes whenever the rule is exact.
fn group_terms(
    x: &DMatrix<f64>,
    rows: &[usize],
    y: &DVector<f64>,
    beta: &DVector<f64>,
    sigma: f64,
    quad: &GhQuadrature,
) -> (f64, DVector<f64>, f64, f64) {
    let p = beta.len();
    let fixed: Vec<f64> = rows.iter().map(|&i| x.row(i).dot(&beta.transpose())).collect();
    let yj: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let (points, terms) = node_terms(&fixed, &yj, sigma, quad);
    let lse = log_sum_exp(&terms);
    let mut gb = DVector::zeros(p);
    let mut gs = 0.0;
    let mut post = 0.0;
    for (&t, &b) in terms.iter().zip(&points) {
        let pk = (t - lse).exp();
        post += pk * b;
        for (l, &i) in rows.iter().enumerate() {
            let resid = yj[l] - sigmoid(fixed[l] + b);
            for a in 0..p {
                gb[a] -= pk * resid * x[(i, a)];
            }
        }
        if sigma > 0.0 {
            gs -= pk * ((b / sigma).powi(2) - 1.0);
        }
    }
    (-lse, gb, gs, post)
}

/// Bernoulli-logit fit with one random intercept per entity, maximizing the
/// Gauss–Hermite marginal likelihood over (β, ln σ) by BFGS. The day index,
/// if any, is ignored.
pub fn fit_gauss_hermite(data: &Dataset, quad: &GhQuadrature, cfg: &FitConfig) -> Result<FittedGlmm> {
    let family = ModelFamily::bernoulli_logit();
    family.check_responses(data.y().as_slice())?;
    let c = data
        .clusters()
        .ok_or_else(|| Error::InvalidArgument("entity index required".into()))?;
    let p = data.p();
    let mut groups = vec![Vec::new(); c.q1()];
    for i in 0..data.n() {
        groups[c.entity()[i]].push(i);
    }
    let x = data.x();
    let y = data.y();
    let objective = |theta: &DVector<f64>| {
        let beta = theta.rows(0, p).into_owned();
        let sigma = theta[p].exp();
        let mut f = 0.0;
        let mut g = DVector::zeros(p + 1);
        for rows in &groups {
            if rows.is_empty() {
                continue;
            }
            let (v, gb, gs, _) = group_terms(x, rows, y, &beta, sigma, quad);
            f += v;
            {
                let mut head = g.rows_mut(0, p);
                head += &gb;
            }
            g[p] += gs;
        }
        (f, g)
    };
    let mut start = DVector::zeros(p + 1);
    if let Ok(glm) = super::fit_glm(data, family, cfg) {
        start.rows_mut(0, p).copy_from(&glm.beta);
    }
    let m = bfgs(objective, start, 1e-8, cfg.max_iter.max(500));
    if !m.value.is_finite() {
        return Err(Error::Convergence {
            iterations: m.iterations,
            message: "marginal likelihood is not finite".into(),
            trace: vec![m.value],
        });
    }
    let beta = m.x.rows(0, p).into_owned();
    let sigma = m.x[p].exp();
    let u_hat = DVector::from_iterator(
        c.q1(),
        groups.iter().map(|rows| {
            if rows.is_empty() {
                0.0
            } else {
                group_terms(x, rows, y, &beta, sigma, quad).3
            }
        }),
    );
    let mut report = FitReport::new("gauss_hermite");
    report.iterations = m.iterations;
    report.converged = m.converged;
    report.gradient_norm = m.gradient_norm;
    report.objective = m.value;
    Ok(FittedGlmm {
        family,
        beta,
        components: VarianceComponents::Clustered {
            sigma_u_sq: sigma * sigma,
            sigma_s_sq: 0.0,
        },
        u_hat,
        s_hat: DVector::zeros(c.q2()),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClusterIndex;

    #[test]
    fn weights_integrate_low_moments() {
        let q = GhQuadrature::default();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let s0: f64 = q.weights.iter().sum();
        let s2: f64 = q.weights.iter().zip(&q.nodes).map(|(w, v)| w * v * v).sum();
        assert!((s0 - sqrt_pi).abs() < 1e-10);
        assert!((s2 - sqrt_pi / 2.0).abs() < 1e-10);
        for k in 0..q.degree {
            assert_eq!(q.nodes[k], -q.nodes[q.degree - 1 - k]);
        }
    }

    #[test]
    fn degenerate_cases() {
        let q = GhQuadrature::default();
        assert_eq!(nll_gauss_hermite(&[], &[], 1.0, &q), 0.0);
        let v = nll_gauss_hermite(&[0.0], &[1.0], 0.0, &q);
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn degree_converges() {
        let a = GhQuadrature::new(20).unwrap();
        let b = GhQuadrature::new(40).unwrap();
        let f = [0.3, -0.2, 1.0];
        let y = [1.0, 0.0, 1.0];
        for s in [0.25, 0.5, 1.0] {
            let d = nll_gauss_hermite(&f, &y, s, &a) - nll_gauss_hermite(&f, &y, s, &b);
            assert!(d.abs() < 1e-6, "{s}: {d}");
        }
    }

    #[test]
    fn fitter_gradient_vanishes() {
        let n = 60;
        let entity: Vec<usize> = (0..n).map(|i| i % 6).collect();
        let day = vec![0; n];
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { ((i * 7) % 11) as f64 / 5.0 - 1.0 });
        let y = DVector::from_fn(n, |i, _| if (i * 13 + i / 6) % 5 < 2 + (i % 6) / 3 { 1.0 } else { 0.0 });
        let c = ClusterIndex::new(entity, day, 6, 1).unwrap();
        let d = Dataset::new(x, y).unwrap().with_clusters(c).unwrap();
        let f = fit_gauss_hermite(&d, &GhQuadrature::default(), &FitConfig::default()).unwrap();
        assert!(f.report.gradient_norm < 1e-6, "{:?}", f.report);
    }
}
