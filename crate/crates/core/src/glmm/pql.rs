use nalgebra::{DMatrix, DVector};

use super::glm::{accumulate_gram, fit_glm, row_major, starting_eta, unit_nll, ETA_LIMIT};
use super::kernel::sq_distances;
use super::lmm::{coordinate_descent, fit_gls, fit_lmm};
use super::{log_grid, FitConfig, FitReport, FittedGlmm, KernelParams, VarianceComponents};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model::{ClusterIndex, Dataset, Distribution, ModelFamily, Structure};

/// Column layout of the stacked coefficient vector (β, u, s) with inactive
/// components dropped.
#[derive(Debug, Clone, Copy)]
struct Layout {
    p: usize,
    q1: usize,
    q2: usize,
    u_on: bool,
    s_on: bool,
}

impl Layout {
    fn u_off(&self) -> usize {
        self.p
    }
    fn s_off(&self) -> usize {
        self.p + if self.u_on { self.q1 } else { 0 }
    }
    fn dim(&self) -> usize {
        self.s_off() + if self.s_on { self.q2 } else { 0 }
    }
}

fn check_sizes(data: &Dataset, c: &ClusterIndex) -> Result<()> {
    if c.q1() + c.q2() >= data.n() {
        return Err(Error::Identifiability(format!(
            "q1 + q2 = {} random effects for n = {} observations",
            c.q1() + c.q2(),
            data.n()
        )));
    }
    SpdFactor::new(&(data.x().transpose() * data.x()), "XᵀX")?;
    Ok(())
}

/// Linear predictor Xβ + u_{entity} + s_{day}.
fn linear_predictor(x: &DMatrix<f64>, beta: &DVector<f64>, c: &ClusterIndex, u: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
    let mut eta = x * beta;
    for i in 0..eta.len() {
        eta[i] += u[c.entity()[i]] + s[c.day()[i]];
    }
    eta
}

const MAX_HALVINGS: usize = 30;

fn diverged(eta: &DVector<f64>) -> bool {
    eta.iter().any(|e| !e.is_finite() || e.abs() > ETA_LIMIT)
}

/// Penalized normal matrix and right-hand side of one IRLS step.
#[allow(clippy::too_many_arguments)]
fn assemble(
    family: &ModelFamily,
    xr: &[f64],
    y: &DVector<f64>,
    c: &ClusterIndex,
    eta: &DVector<f64>,
    lay: Layout,
    su2: f64,
    ss2: f64,
    ridge: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let m = lay.dim();
    let (n, p) = (y.len(), lay.p);
    let mut w = DVector::zeros(n);
    let mut z = DVector::zeros(n);
    for i in 0..n {
        let (wi, r) = family.working(eta[i], y[i]);
        w[i] = wi;
        z[i] = wi * eta[i] + r;
    }
    let mut a = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    if p > 0 {
        accumulate_gram(xr, p, w.as_slice(), z.as_slice(), &mut a, &mut rhs);
        for (i, row) in xr.chunks_exact(p).enumerate() {
            if lay.u_on {
                let r = lay.u_off() + c.entity()[i];
                for j in 0..p {
                    a[(r, j)] += w[i] * row[j];
                }
            }
            if lay.s_on {
                let r = lay.s_off() + c.day()[i];
                for j in 0..p {
                    a[(r, j)] += w[i] * row[j];
                }
            }
        }
    }
    for i in 0..n {
        let eu = lay.u_off() + c.entity()[i];
        let ds = lay.s_off() + c.day()[i];
        if lay.u_on {
            rhs[eu] += z[i];
            a[(eu, eu)] += w[i];
        }
        if lay.s_on {
            rhs[ds] += z[i];
            a[(ds, ds)] += w[i];
            if lay.u_on {
                a[(ds, eu)] += w[i];
            }
        }
    }
    if lay.u_on {
        for j in 0..lay.q1 {
            a[(lay.u_off() + j, lay.u_off() + j)] += 1.0 / su2;
        }
    }
    if lay.s_on {
        for j in 0..lay.q2 {
            a[(lay.s_off() + j, lay.s_off() + j)] += 1.0 / ss2;
        }
    }
    for ja in 0..m {
        a[(ja, ja)] += ridge;
        if ja >= p {
            for jb in 0..ja {
                a[(jb, ja)] = a[(ja, jb)];
            }
        }
    }
    (a, rhs)
}

fn split(theta: &DVector<f64>, lay: Layout) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let beta = theta.rows(0, lay.p).into_owned();
    let u = if lay.u_on {
        theta.rows(lay.u_off(), lay.q1).into_owned()
    } else {
        DVector::zeros(lay.q1)
    };
    let s = if lay.s_on {
        theta.rows(lay.s_off(), lay.q2).into_owned()
    } else {
        DVector::zeros(lay.q2)
    };
    (beta, u, s)
}

fn rel_change(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a - b).amax() / (1.0 + a.amax().max(b.amax()))
}

struct ClusteredState {
    beta: DVector<f64>,
    u: DVector<f64>,
    s: DVector<f64>,
    su2: f64,
    ss2: f64,
}

fn pql_clustered(
    data: &Dataset,
    c: &ClusterIndex,
    family: ModelFamily,
    cfg: &FitConfig,
    mut st: ClusteredState,
    update: bool,
) -> Result<FittedGlmm> {
    let x = data.x();
    let y = data.y();
    let mut trace = Vec::new();
    let mut report = FitReport::new(if update { "pql" } else { "penalized_irls" });
    report.converged = false;
    let xr = row_major(x);
    let mut last_delta: [Option<f64>; 2] = [None, None];
    for it in 1..=cfg.max_iter {
        let lay = Layout {
            p: x.ncols(),
            q1: c.q1(),
            q2: c.q2(),
            u_on: st.su2 > 0.0,
            s_on: st.ss2 > 0.0,
        };
        let eta = linear_predictor(x, &st.beta, c, &st.u, &st.s);
        if diverged(&eta) {
            return Err(Error::Convergence {
                iterations: it,
                message: "working response overflow".into(),
                trace,
            });
        }
        let (a, rhs) = assemble(&family, &xr, y, c, &eta, lay, st.su2, st.ss2, cfg.ridge);
        let fac = SpdFactor::new(&a, "penalized normal matrix")?;
        let theta = fac.solve_vec(&rhs);
        let (mut beta, mut u, mut s) = split(&theta, lay);
        // Step halving on the penalized objective at the current components.
        let current = penalized_score(&family, data, c, &eta, &st).1;
        let mut halvings = 0;
        loop {
            let trial = ClusteredState {
                beta: beta.clone(),
                u: u.clone(),
                s: s.clone(),
                su2: st.su2,
                ss2: st.ss2,
            };
            let e = linear_predictor(x, &beta, c, &u, &s);
            let obj = if diverged(&e) {
                f64::INFINITY
            } else {
                penalized_score(&family, data, c, &e, &trial).1
            };
            if obj <= current + 1e-10 * (1.0 + current.abs()) || halvings == MAX_HALVINGS {
                break;
            }
            beta = (&beta + &st.beta) * 0.5;
            u = (&u + &st.u) * 0.5;
            s = (&s + &st.s) * 0.5;
            halvings += 1;
        }
        let mut change = rel_change(&beta, &st.beta)
            .max(rel_change(&u, &st.u))
            .max(rel_change(&s, &st.s));
        // Component updates wait until the mode step is a full Newton step.
        if update && halvings == 0 && (lay.u_on || lay.s_on) {
            let diag = fac.inverse_diagonal(lay.p);
            let schall = |off: usize, q: usize, sigma2: f64, b: &DVector<f64>| {
                let tr: f64 = diag[off - lay.p..off - lay.p + q].iter().sum();
                let edf = (q as f64 - tr / sigma2).max(1e-3);
                b.norm_squared() / edf
            };
            let mut next = (st.su2, st.ss2);
            if lay.u_on {
                next.0 = schall(lay.u_off(), lay.q1, st.su2, &u);
            }
            if lay.s_on {
                next.1 = schall(lay.s_off(), lay.q2, st.ss2, &s);
            }
            for (old, new) in [(st.su2, &mut next.0), (st.ss2, &mut next.1)] {
                if old > 0.0 {
                    if *new < cfg.absorb {
                        *new = 0.0;
                        change = f64::INFINITY;
                    } else {
                        change = change.max((*new - old).abs() / (1.0 + old));
                    }
                }
            }
            // Aitken extrapolation of the linearly converging fixed point.
            let mut jumped = false;
            for (k, (old, new)) in [(st.su2, &mut next.0), (st.ss2, &mut next.1)].into_iter().enumerate() {
                if old > 0.0 && *new > 0.0 {
                    let d = *new - old;
                    if let Some(prev) = last_delta[k].filter(|_| d.abs() < 1e-2 * (1.0 + old)) {
                        let r = d / prev;
                        if r > 0.0 && r < 0.95 {
                            let jump = *new + d * r / (1.0 - r);
                            if jump > cfg.absorb {
                                change = change.max((jump - old).abs() / (1.0 + old));
                                *new = jump;
                                jumped = true;
                            }
                        }
                    }
                    last_delta[k] = Some(d);
                } else {
                    last_delta[k] = None;
                }
            }
            if jumped {
                last_delta = [None, None];
            }
            st.su2 = next.0;
            st.ss2 = next.1;
        }
        st.beta = beta;
        st.u = if st.su2 > 0.0 { u } else { DVector::zeros(c.q1()) };
        st.s = if st.ss2 > 0.0 { s } else { DVector::zeros(c.q2()) };
        trace.push(change);
        report.iterations = it;
        if change < cfg.tol {
            report.converged = true;
            break;
        }
    }
    let eta = linear_predictor(x, &st.beta, c, &st.u, &st.s);
    if diverged(&eta) {
        return Err(Error::Convergence {
            iterations: report.iterations,
            message: "working response overflow".into(),
            trace,
        });
    }
    let (grad, objective) = penalized_score(&family, data, c, &eta, &st);
    report.gradient_norm = grad;
    report.objective = objective;
    Ok(FittedGlmm {
        family,
        beta: st.beta,
        components: VarianceComponents::Clustered {
            sigma_u_sq: st.su2,
            sigma_s_sq: st.ss2,
        },
        u_hat: st.u,
        s_hat: st.s,
        report,
    })
}

fn penalized_score(
    family: &ModelFamily,
    data: &Dataset,
    c: &ClusterIndex,
    eta: &DVector<f64>,
    st: &ClusteredState,
) -> (f64, f64) {
    let x = data.x();
    let y = data.y();
    let mut gb = DVector::<f64>::zeros(x.ncols());
    let mut gu = DVector::zeros(c.q1());
    let mut gs = DVector::zeros(c.q2());
    let mut obj = 0.0;
    for i in 0..y.len() {
        let (_, r) = family.working(eta[i], y[i]);
        for j in 0..x.ncols() {
            gb[j] += x[(i, j)] * r;
        }
        gu[c.entity()[i]] += r;
        gs[c.day()[i]] += r;
        obj += unit_nll(family, eta[i], y[i]);
    }
    let mut ss = gb.norm_squared();
    if st.su2 > 0.0 {
        ss += (gu - &st.u / st.su2).norm_squared();
        obj += 0.5 * st.u.norm_squared() / st.su2;
    }
    if st.ss2 > 0.0 {
        ss += (gs - &st.s / st.ss2).norm_squared();
        obj += 0.5 * st.s.norm_squared() / st.ss2;
    }
    (ss.sqrt(), obj)
}

fn cold_beta(data: &Dataset, family: ModelFamily, cfg: &FitConfig) -> DVector<f64> {
    match fit_glm(data, family, cfg) {
        Ok(f) if f.beta.iter().all(|b| b.is_finite()) => f.beta,
        _ => DVector::zeros(data.p()),
    }
}

/// GLMM fit by penalized quasi-likelihood. Gaussian-identity data are
/// delegated to [`fit_lmm`].
pub fn fit_glmm(data: &Dataset, family: ModelFamily, cfg: &FitConfig) -> Result<FittedGlmm> {
    fit_glmm_from(data, family, cfg, None)
}

/// As [`fit_glmm`], starting from a previous fit when given.
pub(crate) fn fit_glmm_from(
    data: &Dataset,
    family: ModelFamily,
    cfg: &FitConfig,
    start: Option<&FittedGlmm>,
) -> Result<FittedGlmm> {
    if family.is_gaussian_identity() {
        return fit_lmm(data, cfg);
    }
    family.check_responses(data.y().as_slice())?;
    match data.structure()? {
        Structure::Iid => fit_glm(data, family, cfg),
        Structure::Clustered(c) => {
            check_sizes(data, c)?;
            let st = match start {
                Some(f) if f.beta.len() == data.p() => {
                    let (su2, ss2) = match f.components {
                        VarianceComponents::Clustered {
                            sigma_u_sq,
                            sigma_s_sq,
                        } => (sigma_u_sq, sigma_s_sq),
                        _ => (0.5, 0.5),
                    };
                    // Only β and the components carry over: the start's
                    // predicted effects belong to other responses and can
                    // send the first Newton step far off.
                    ClusteredState {
                        beta: f.beta.clone(),
                        u: DVector::zeros(c.q1()),
                        s: DVector::zeros(c.q2()),
                        // A component absorbed at zero in the start fit gets a
                        // fresh chance in the new data.
                        su2: if su2 > 0.0 { su2 } else { 0.1 },
                        ss2: if ss2 > 0.0 { ss2 } else { 0.1 },
                    }
                }
                _ => ClusteredState {
                    beta: cold_beta(data, family, cfg),
                    u: DVector::zeros(c.q1()),
                    s: DVector::zeros(c.q2()),
                    su2: 0.5,
                    ss2: 0.5,
                },
            };
            pql_clustered(data, c, family, cfg, st, true)
        }
        Structure::Spatial(_) => {
            let (beta, delta, kernel) = match start {
                Some(f) if f.beta.len() == data.p() => {
                    let k = match f.components {
                        VarianceComponents::Spatial(k) => Some(k),
                        _ => None,
                    };
                    (f.beta.clone(), None, k)
                }
                _ => (cold_beta(data, family, cfg), None, None),
            };
            pql_spatial(data, family, cfg, beta, delta, kernel, true)
        }
    }
}

/// Penalized IRLS at fixed variance components (no component update).
pub fn fit_glmm_fixed(
    data: &Dataset,
    family: ModelFamily,
    components: VarianceComponents,
    cfg: &FitConfig,
) -> Result<FittedGlmm> {
    family.check_responses(data.y().as_slice())?;
    match (data.structure()?, components) {
        (Structure::Iid, VarianceComponents::None) => fit_glm(data, family, cfg),
        (
            Structure::Clustered(c),
            VarianceComponents::Clustered {
                sigma_u_sq,
                sigma_s_sq,
            },
        ) => {
            check_sizes(data, c)?;
            let st = ClusteredState {
                beta: cold_beta(data, family, cfg),
                u: DVector::zeros(c.q1()),
                s: DVector::zeros(c.q2()),
                su2: sigma_u_sq,
                ss2: sigma_s_sq,
            };
            pql_clustered(data, c, family, cfg, st, false)
        }
        (Structure::Spatial(_), VarianceComponents::Spatial(k)) => {
            if family.is_gaussian_identity() {
                return fit_gls(data, components, family.phi);
            }
            pql_spatial(data, family, cfg, cold_beta(data, family, cfg), None, Some(k), false)
        }
        _ => Err(Error::InvalidArgument(
            "variance components do not match the dataset's correlation index".into(),
        )),
    }
}

/// Working-model GLS: returns (β, δ̂, −2 log-likelihood of z).
fn working_gls(
    x: &DMatrix<f64>,
    z: &DVector<f64>,
    winv: &DVector<f64>,
    k: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    let mut sigma = k.clone();
    for i in 0..z.len() {
        sigma[(i, i)] += winv[i];
    }
    let sf = SpdFactor::new(&sigma, "working covariance")?;
    let six = sf.solve_mat(x);
    let xf = SpdFactor::new(&(x.transpose() * &six), "GLS normal matrix")?;
    let beta = xf.solve_vec(&(six.transpose() * z));
    let resid = z - x * &beta;
    let alpha = sf.solve_vec(&resid);
    let delta = k * &alpha;
    Ok((beta, delta, resid.dot(&alpha) + sf.ln_det()))
}

#[allow(clippy::too_many_arguments)]
fn pql_spatial(
    data: &Dataset,
    family: ModelFamily,
    cfg: &FitConfig,
    mut beta: DVector<f64>,
    delta: Option<DVector<f64>>,
    kernel: Option<KernelParams>,
    update: bool,
) -> Result<FittedGlmm> {
    let spatial = data
        .spatial()
        .ok_or_else(|| Error::InvalidArgument("spatial index required".into()))?;
    SpdFactor::new(&(data.x().transpose() * data.x()), "XᵀX")?;
    let x = data.x();
    let y = data.y();
    let n = data.n();
    let d2 = sq_distances(spatial.coords());
    let mut delta = delta.unwrap_or_else(|| DVector::zeros(n));
    let mut kp = kernel;
    let mut trace = Vec::new();
    let mut report = FitReport::new(if update { "pql" } else { "penalized_irls" });
    report.converged = false;
    let mut objective = f64::NAN;
    if kp.is_none() && !update {
        return Err(Error::InvalidArgument("fixed fit needs kernel parameters".into()));
    }
    let start_eta = starting_eta(&family, y);
    for it in 1..=cfg.max_iter {
        let eta = if it == 1 && kp.is_none() {
            // Cold start: working response around a shrunken version of y.
            start_eta.clone()
        } else {
            x * &beta + &delta
        };
        if diverged(&eta) {
            return Err(Error::Convergence {
                iterations: it,
                message: "working response overflow".into(),
                trace,
            });
        }
        let mut z = DVector::zeros(n);
        let mut winv = DVector::zeros(n);
        for i in 0..n {
            let (w, r) = family.working(eta[i], y[i]);
            let w = w.max(1e-10);
            z[i] = eta[i] + r / w;
            winv[i] = 1.0 / w;
        }
        let objective_at = |t: &[f64]| -> Result<f64> {
            let k = KernelParams {
                sigma_out_sq: t[0],
                sigma_in_sq: t[1],
            }
            .from_sq_distances(&d2);
            Ok(working_gls(x, &z, &winv, &k)?.2)
        };
        let mut kernel_change = 0.0;
        if update {
            let start = match kp {
                Some(k) => vec![k.sigma_out_sq, k.sigma_in_sq],
                None => {
                    let grid = log_grid(1e-2, 1e2, cfg.grid);
                    let mut best = (f64::INFINITY, vec![1.0, 1.0]);
                    for &a in &grid {
                        for &b in &grid {
                            let v = objective_at(&[a, b])?;
                            if v < best.0 {
                                best = (v, vec![a, b]);
                            }
                        }
                    }
                    best.1
                }
            };
            let widen = |v: f64, lo: f64, hi: f64| {
                if v > 0.0 {
                    ((v * (-2f64).exp()).max(lo), (v * 2f64.exp()).min(hi))
                } else {
                    (lo, hi)
                }
            };
            let bounds = [widen(start[0], 1e-6, 1e4), widen(start[1], 1e-4, 1e4)];
            let found = coordinate_descent(objective_at, start, &bounds, &[true, false], cfg.tol)?;
            let next = KernelParams {
                sigma_out_sq: if found.params[0] < cfg.absorb { 0.0 } else { found.params[0] },
                sigma_in_sq: found.params[1],
            };
            if let Some(old) = kp {
                kernel_change = ((next.sigma_out_sq - old.sigma_out_sq).abs() / (1.0 + old.sigma_out_sq))
                    .max((next.sigma_in_sq - old.sigma_in_sq).abs() / (1.0 + old.sigma_in_sq));
            } else {
                kernel_change = f64::INFINITY;
            }
            kp = Some(next);
        }
        let k = kp.expect("kernel parameters set");
        let kmat = k.from_sq_distances(&d2);
        let (nb, nd, obj) = working_gls(x, &z, &winv, &kmat)?;
        objective = obj;
        let change = rel_change(&nb, &beta).max(rel_change(&nd, &delta)).max(kernel_change);
        beta = nb;
        delta = nd;
        trace.push(change);
        report.iterations = it;
        if change < cfg.tol {
            report.converged = true;
            break;
        }
    }
    let eta = x * &beta + &delta;
    let mut grad = DVector::<f64>::zeros(x.ncols());
    for i in 0..n {
        let (_, r) = family.working(eta[i], y[i]);
        for j in 0..x.ncols() {
            grad[j] += x[(i, j)] * r;
        }
    }
    report.gradient_norm = grad.norm();
    report.objective = objective;
    Ok(FittedGlmm {
        family,
        beta,
        components: VarianceComponents::Spatial(kp.expect("kernel parameters set")),
        u_hat: DVector::zeros(0),
        s_hat: DVector::zeros(0),
        report,
    })
}

/// Joint-likelihood maximizer (û, ŝ) given β̂ and γ̂_r (BLUP for
/// Gaussian-identity fits).
pub fn predict_random_effects(
    fit: &FittedGlmm,
    data: &Dataset,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let c = data
        .clusters()
        .ok_or_else(|| Error::InvalidArgument("clustered data required".into()))?;
    let VarianceComponents::Clustered {
        sigma_u_sq,
        sigma_s_sq,
    } = fit.components
    else {
        return Err(Error::InvalidArgument("clustered fit required".into()));
    };
    if fit.beta.len() != data.p() {
        return Err(Error::InvalidArgument("coefficient length mismatch".into()));
    }
    if fit.family.distribution == Distribution::Gaussian && fit.family.is_gaussian_identity() {
        let v = super::lmm::marginal_covariance(data, &fit.components, fit.phi())?;
        let resid = data.y() - data.x() * &fit.beta;
        let alpha = SpdFactor::new(&v, "marginal covariance")?.solve_vec(&resid);
        return Ok(super::lmm::blup_from_alpha(data, &fit.components, &alpha));
    }
    let lay = Layout {
        p: 0,
        q1: c.q1(),
        q2: c.q2(),
        u_on: sigma_u_sq > 0.0,
        s_on: sigma_s_sq > 0.0,
    };
    let mut u = DVector::zeros(c.q1());
    let mut s = DVector::zeros(c.q2());
    if lay.dim() == 0 {
        return Ok((u, s));
    }
    let offset = data.x() * &fit.beta;
    let mut trace = Vec::new();
    for _ in 0..FitConfig::default().max_iter {
        let (nu, ns) = effects_step(&fit.family, c, data.y(), &offset, sigma_u_sq, sigma_s_sq, &u, &s)?;
        let change = rel_change(&nu, &u).max(rel_change(&ns, &s));
        u = nu;
        s = ns;
        trace.push(change);
        if change < 1e-12 {
            return Ok((u, s));
        }
    }
    Err(Error::Convergence {
        iterations: FitConfig::default().max_iter,
        message: "random-effect prediction did not converge".into(),
        trace,
    })
}

/// One Newton step on the random effects b = (u, s) with the fixed part
/// `offset` held constant: b ← H⁻¹(Qᵀ(W(η − offset) + r)).
#[allow(clippy::too_many_arguments)]
pub(crate) fn effects_step(
    family: &ModelFamily,
    c: &ClusterIndex,
    y: &DVector<f64>,
    offset: &DVector<f64>,
    sigma_u_sq: f64,
    sigma_s_sq: f64,
    u: &DVector<f64>,
    s: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let lay = Layout {
        p: 0,
        q1: c.q1(),
        q2: c.q2(),
        u_on: sigma_u_sq > 0.0,
        s_on: sigma_s_sq > 0.0,
    };
    if lay.dim() == 0 {
        return Ok((DVector::zeros(c.q1()), DVector::zeros(c.q2())));
    }
    let n = y.len();
    let empty = DMatrix::zeros(n, 0);
    let none = DVector::zeros(0);
    let eta = linear_predictor(&empty, &none, c, u, s) + offset;
    if diverged(&eta) {
        return Err(Error::Convergence {
            iterations: 1,
            message: "random-effect prediction diverged".into(),
            trace: Vec::new(),
        });
    }
    let (a, mut rhs) = assemble(family, &[], y, c, &eta, lay, sigma_u_sq, sigma_s_sq, 0.0);
    for i in 0..n {
        let (w, _) = family.working(eta[i], y[i]);
        let sub = w * offset[i];
        if lay.u_on {
            rhs[lay.u_off() + c.entity()[i]] -= sub;
        }
        if lay.s_on {
            rhs[lay.s_off() + c.day()[i]] -= sub;
        }
    }
    let theta = SpdFactor::new(&a, "random-effect curvature")?.solve_vec(&rhs);
    let (_, nu, ns) = split(&theta, lay);
    Ok((nu, ns))
}
