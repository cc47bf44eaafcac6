use nalgebra::{DMatrix, DVector};

use super::{FitConfig, FitReport, FittedGlmm, VarianceComponents};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model::{Dataset, Distribution, ModelFamily};

/// Largest linear predictor magnitude accepted before declaring divergence.
pub(crate) const ETA_LIMIT: f64 = 700.0;

/// Starting linear predictor from a shrunken version of the responses.
pub(crate) fn starting_eta(family: &ModelFamily, y: &DVector<f64>) -> DVector<f64> {
    let mean = y.mean();
    y.map(|v| {
        let mu = match family.distribution {
            Distribution::Bernoulli => (v + 0.5) / 2.0,
            Distribution::Poisson => (v + mean.max(0.1)) / 2.0,
            Distribution::Gaussian => v,
        };
        family.link.linear_predictor(mu)
    })
}

/// Row-major copy of X, so each observation's covariates are contiguous.
pub(crate) fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

/// Adds the lower triangle of XᵀWX into the leading p×p block of `a` (which
/// has `m` rows) and Xᵀz into `rhs`.
pub(crate) fn accumulate_gram(xr: &[f64], p: usize, w: &[f64], z: &[f64], a: &mut DMatrix<f64>, rhs: &mut DVector<f64>) {
    let m = a.nrows();
    let out = a.as_mut_slice();
    for (i, row) in xr.chunks_exact(p).enumerate() {
        let wi = w[i];
        let zi = z[i];
        for b in 0..p {
            rhs[b] += row[b] * zi;
            let s = wi * row[b];
            let col = &mut out[b * m + b..b * m + p];
            for (o, &xa) in col.iter_mut().zip(&row[b..]) {
                *o += s * xa;
            }
        }
    }
}

/// Plain GLM by iteratively reweighted least squares (no random effects).
pub fn fit_glm(data: &Dataset, family: ModelFamily, cfg: &FitConfig) -> Result<FittedGlmm> {
    family.check_responses(data.y().as_slice())?;
    let x = data.x();
    let y = data.y();
    let (n, p) = (x.nrows(), x.ncols());
    if n < p {
        return Err(Error::RankDeficient(format!("{n} rows for {p} coefficients")));
    }
    let mut eta = starting_eta(&family, y);
    let mut beta = DVector::zeros(p);
    let mut trace = Vec::new();
    let mut report = FitReport::new("irls");
    report.converged = false;
    let xr = row_major(x);
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    for it in 1..=cfg.max_iter {
        for i in 0..n {
            let (wi, r) = family.working(eta[i], y[i]);
            w[i] = wi;
            z[i] = wi * eta[i] + r;
        }
        let mut xtwx = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        accumulate_gram(&xr, p, &w, &z, &mut xtwx, &mut rhs);
        for a in 0..p {
            xtwx[(a, a)] += cfg.ridge;
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        let mut new_beta = SpdFactor::new(&xtwx, "GLM normal matrix")?.solve_vec(&rhs);
        // Halve the step while the likelihood gets worse (the first
        // iteration starts from the responses, not from beta).
        if it > 1 {
            let current = total_nll(&family, &eta, y);
            for _ in 0..30 {
                let trial = x * &new_beta;
                if trial.iter().all(|e| e.abs() <= ETA_LIMIT) && total_nll(&family, &trial, y) <= current + 1e-12 * current.abs()
                {
                    break;
                }
                new_beta = (&new_beta + &beta) * 0.5;
            }
        }
        let change = (&new_beta - &beta).amax() / (1.0 + new_beta.amax());
        trace.push(change);
        beta = new_beta;
        eta = x * &beta;
        if eta.iter().any(|e| !e.is_finite() || e.abs() > ETA_LIMIT) {
            return Err(Error::Convergence {
                iterations: it,
                message: "linear predictor diverged (separation?)".into(),
                trace,
            });
        }
        report.iterations = it;
        if change < cfg.tol {
            report.converged = true;
            break;
        }
    }
    let mut grad = DVector::<f64>::zeros(p);
    let mut nll = 0.0;
    for i in 0..n {
        let (_, r) = family.working(eta[i], y[i]);
        for a in 0..p {
            grad[a] += x[(i, a)] * r;
        }
        nll += unit_nll(&family, eta[i], y[i]);
    }
    report.gradient_norm = grad.norm();
    report.objective = nll;
    Ok(FittedGlmm {
        family,
        beta,
        components: VarianceComponents::None,
        u_hat: DVector::zeros(0),
        s_hat: DVector::zeros(0),
        report,
    })
}

fn total_nll(family: &ModelFamily, eta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    eta.iter().zip(y.iter()).map(|(&e, &v)| unit_nll(family, e, v)).sum()
}

/// Negative log-likelihood of one response, up to terms free of η.
pub(crate) fn unit_nll(family: &ModelFamily, eta: f64, y: f64) -> f64 {
    match family.distribution {
        Distribution::Bernoulli => {
            let mu = family
                .link
                .mean(eta)
                .clamp(crate::model::loss::PROBABILITY_CLAMP, 1.0 - crate::model::loss::PROBABILITY_CLAMP);
            -(y * mu.ln() + (1.0 - y) * (1.0 - mu).ln())
        }
        Distribution::Poisson => {
            let mu = family.link.mean(eta);
            mu - y * mu.ln()
        }
        Distribution::Gaussian => {
            let mu = family.link.mean(eta);
            0.5 * (y - mu).powi(2) / family.phi
        }
    }
}
