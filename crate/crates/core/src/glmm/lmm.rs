use nalgebra::{DMatrix, DVector};

use super::kernel::sq_distances;
use super::{log_grid, FitConfig, FitReport, FittedGlmm, KernelParams, VarianceComponents};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model::{Dataset, ModelFamily, Structure};
use crate::optim::golden_section;

/// Bounds of the log-scale variance-ratio search.
const RATIO_MIN: f64 = 1e-6;
const RATIO_MAX: f64 = 1e4;
const MAX_SWEEPS: usize = 100;

/// Cov(δ) implied by `components` on this dataset's index.
pub(crate) fn effect_covariance(data: &Dataset, components: &VarianceComponents) -> Result<DMatrix<f64>> {
    let n = data.n();
    match (components, data.structure()?) {
        (VarianceComponents::None, _) => Ok(DMatrix::zeros(n, n)),
        (
            VarianceComponents::Clustered {
                sigma_u_sq,
                sigma_s_sq,
            },
            Structure::Clustered(c),
        ) => Ok(c.covariance(*sigma_u_sq, *sigma_s_sq)),
        (VarianceComponents::Spatial(k), Structure::Spatial(s)) => Ok(k.matrix(s.coords())),
        _ => Err(Error::InvalidArgument(
            "variance components do not match the dataset's correlation index".into(),
        )),
    }
}

/// Marginal covariance V = Cov(δ) + φI of a Gaussian-identity model.
pub fn marginal_covariance(
    data: &Dataset,
    components: &VarianceComponents,
    phi: f64,
) -> Result<DMatrix<f64>> {
    let mut v = effect_covariance(data, components)?;
    for i in 0..data.n() {
        v[(i, i)] += phi;
    }
    Ok(v)
}

/// GLS fit with known variance components; random effects by BLUP.
pub fn fit_gls(data: &Dataset, components: VarianceComponents, phi: f64) -> Result<FittedGlmm> {
    if !(phi > 0.0) {
        return Err(Error::InvalidArgument(format!("phi must be positive, got {phi}")));
    }
    let v = marginal_covariance(data, &components, phi)?;
    let vf = SpdFactor::new(&v, "marginal covariance")?;
    let x = data.x();
    let vix = vf.solve_mat(x);
    let xtvix = x.transpose() * &vix;
    let xf = SpdFactor::new(&xtvix, "GLS normal matrix")?;
    let beta = xf.solve_vec(&(vix.transpose() * data.y()));
    let resid = data.y() - x * &beta;
    let alpha = vf.solve_vec(&resid);
    let (u_hat, s_hat) = blup_from_alpha(data, &components, &alpha);
    let mut report = FitReport::new("gls");
    report.objective = 0.5 * (resid.dot(&alpha) + vf.ln_det());
    Ok(FittedGlmm {
        family: ModelFamily::gaussian(phi),
        beta,
        components,
        u_hat,
        s_hat,
        report,
    })
}

/// û = σ_u² Z_uᵀ V⁻¹ r and ŝ = σ_s² Z_sᵀ V⁻¹ r given α = V⁻¹ r.
pub(crate) fn blup_from_alpha(
    data: &Dataset,
    components: &VarianceComponents,
    alpha: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    match (components, data.clusters()) {
        (
            VarianceComponents::Clustered {
                sigma_u_sq,
                sigma_s_sq,
            },
            Some(c),
        ) => {
            let mut u = DVector::zeros(c.q1());
            let mut s = DVector::zeros(c.q2());
            for i in 0..c.len() {
                u[c.entity()[i]] += alpha[i];
                s[c.day()[i]] += alpha[i];
            }
            (u * *sigma_u_sq, s * *sigma_s_sq)
        }
        _ => (DVector::zeros(0), DVector::zeros(0)),
    }
}

/// −2 × profile log-likelihood (up to a constant) for V = φ Ṽ.
fn profile_objective(data: &Dataset, vt: &DMatrix<f64>) -> Result<f64> {
    let n = data.n() as f64;
    let vf = SpdFactor::new(vt, "scaled marginal covariance")?;
    let x = data.x();
    let vix = vf.solve_mat(x);
    let xf = SpdFactor::new(&(x.transpose() * &vix), "GLS normal matrix")?;
    let beta = xf.solve_vec(&(vix.transpose() * data.y()));
    let resid = data.y() - x * beta;
    let q = resid.dot(&vf.solve_vec(&resid)).max(1e-300);
    Ok(n * (q / n).ln() + vf.ln_det())
}

pub(crate) struct Search {
    pub(crate) params: Vec<f64>,
    value: f64,
    sweeps: usize,
}

/// Coordinate descent over log-scale parameters; coordinates flagged in
/// `zero_ok` may also sit exactly at zero.
pub(crate) fn coordinate_descent<F>(
    mut f: F,
    start: Vec<f64>,
    bounds: &[(f64, f64)],
    zero_ok: &[bool],
    tol: f64,
) -> Result<Search>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut params = start;
    let mut value = f(&params)?;
    let mut trace = vec![value];
    for sweep in 1..=MAX_SWEEPS {
        let before = params.clone();
        let before_value = value;
        for k in 0..params.len() {
            let (lo, hi) = bounds[k];
            let mut err = None;
            let mut trial = params.clone();
            let (t, ft) = golden_section(
                |t| {
                    trial[k] = t.exp();
                    match f(&trial) {
                        Ok(v) => v,
                        Err(e) => {
                            err.get_or_insert(e);
                            f64::INFINITY
                        }
                    }
                },
                lo.ln(),
                hi.ln(),
                1e-7,
                200,
            );
            if let Some(e) = err {
                if !ft.is_finite() {
                    return Err(e);
                }
            }
            if ft < value {
                params[k] = t.exp();
                value = ft;
            }
            if zero_ok[k] {
                let mut z = params.clone();
                z[k] = 0.0;
                let fz = f(&z)?;
                if fz <= value + 1e-12 {
                    params[k] = 0.0;
                    value = fz;
                }
            }
        }
        trace.push(value);
        let moved = params
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs() / (1e-12 + a.abs().max(b.abs())))
            .fold(0.0, f64::max);
        if moved < tol.sqrt() || (before_value - value).abs() <= tol * (1.0 + value.abs()) {
            return Ok(Search {
                params,
                value,
                sweeps: sweep,
            });
        }
    }
    Err(Error::Convergence {
        iterations: MAX_SWEEPS,
        message: "variance-component search did not settle".into(),
        trace,
    })
}

/// Central-difference gradient norm of `f` in log-parameters (positive
/// coordinates only).
fn log_gradient_norm<F: FnMut(&[f64]) -> Result<f64>>(mut f: F, params: &[f64]) -> f64 {
    let h: f64 = 1e-4;
    let mut ss = 0.0;
    for k in 0..params.len() {
        if params[k] <= 0.0 {
            continue;
        }
        let mut a = params.to_vec();
        let mut b = params.to_vec();
        a[k] = params[k] * h.exp();
        b[k] = params[k] * (-h).exp();
        if let (Ok(fa), Ok(fb)) = (f(&a), f(&b)) {
            ss += ((fa - fb) / (2.0 * h)).powi(2);
        }
    }
    ss.sqrt()
}

/// Gaussian-identity mixed model by maximum likelihood, profiling out β and φ.
pub fn fit_lmm(data: &Dataset, cfg: &FitConfig) -> Result<FittedGlmm> {
    let n = data.n();
    let p = data.p();
    if n <= p {
        return Err(Error::RankDeficient(format!("{n} rows for {p} coefficients")));
    }
    if data.y().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite response".into()));
    }
    SpdFactor::new(&(data.x().transpose() * data.x()), "XᵀX")?;
    let grid = {
        let mut g = vec![0.0];
        g.extend(log_grid(1e-2, 1e2, cfg.grid));
        g
    };
    let (search, components_of): (Search, Box<dyn Fn(&[f64], f64) -> VarianceComponents>) =
        match data.structure()? {
            Structure::Iid => {
                let fit = fit_gls(data, VarianceComponents::None, 1.0)?;
                let r = data.y() - data.x() * &fit.beta;
                let phi = (r.norm_squared() / n as f64).max(f64::MIN_POSITIVE);
                let mut out = fit_gls(data, VarianceComponents::None, phi)?;
                out.report.method = "ml".into();
                return Ok(out);
            }
            Structure::Clustered(c) => {
                let zu = c.covariance(1.0, 0.0);
                let zs = c.covariance(0.0, 1.0);
                let f = |t: &[f64]| {
                    let vt = DMatrix::identity(n, n) + &zu * t[0] + &zs * t[1];
                    profile_objective(data, &vt)
                };
                let mut best = (f64::INFINITY, vec![0.0, 0.0]);
                for &a in &grid {
                    for &b in &grid {
                        let v = f(&[a, b])?;
                        if v < best.0 {
                            best = (v, vec![a, b]);
                        }
                    }
                }
                let bounds = [(RATIO_MIN, RATIO_MAX); 2];
                let s = coordinate_descent(f, best.1, &bounds, &[true, true], cfg.tol)?;
                (
                    s,
                    Box::new(|t: &[f64], phi: f64| VarianceComponents::Clustered {
                        sigma_u_sq: t[0] * phi,
                        sigma_s_sq: t[1] * phi,
                    }),
                )
            }
            Structure::Spatial(s) => {
                let d2 = sq_distances(s.coords());
                let f = |t: &[f64]| {
                    let k = KernelParams {
                        sigma_out_sq: t[0],
                        sigma_in_sq: t[1],
                    };
                    let vt = DMatrix::identity(n, n) + k.from_sq_distances(&d2);
                    profile_objective(data, &vt)
                };
                let mut best = (f64::INFINITY, vec![0.0, 1.0]);
                for &a in &grid {
                    for &b in &grid[1..] {
                        let v = f(&[a, b])?;
                        if v < best.0 {
                            best = (v, vec![a, b]);
                        }
                    }
                }
                let bounds = [(RATIO_MIN, RATIO_MAX), (1e-4, 1e4)];
                let s = coordinate_descent(f, best.1, &bounds, &[true, false], cfg.tol)?;
                (
                    s,
                    Box::new(|t: &[f64], phi: f64| {
                        VarianceComponents::Spatial(KernelParams {
                            sigma_out_sq: t[0] * phi,
                            sigma_in_sq: t[1],
                        })
                    }),
                )
            }
        };
    // φ̂ from the profile at the optimum.
    let unit = components_of(&search.params, 1.0);
    let scaled = fit_gls(data, unit, 1.0)?;
    let resid = data.y() - data.x() * &scaled.beta;
    let v1 = marginal_covariance(data, &unit, 1.0)?;
    let q = resid.dot(&SpdFactor::new(&v1, "scaled marginal covariance")?.solve_vec(&resid));
    let phi = (q / n as f64).max(f64::MIN_POSITIVE);
    let components = components_of(&search.params, phi);
    let mut fit = fit_gls(data, components, phi)?;
    let grad = log_gradient_norm(
        |t| {
            let c = components_of(t, 1.0);
            let v = marginal_covariance(data, &c, 1.0)?;
            profile_objective(data, &v)
        },
        &search.params,
    );
    fit.report = FitReport {
        method: "ml".into(),
        iterations: search.sweeps,
        converged: true,
        gradient_norm: grad,
        objective: search.value,
    };
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClusterIndex, SpatialIndex};
    use crate::rng;

    #[test]
    fn gls_without_effects_is_mean() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let d = Dataset::new(x, DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let f = fit_gls(&d, VarianceComponents::None, 1.0).unwrap();
        assert!((f.beta[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let c = ClusterIndex::new(vec![0, 0, 1, 1], vec![0, 1, 0, 1], 2, 2).unwrap();
        let d = Dataset::new(x, DVector::from_vec(vec![1.0, 0.0, 2.0, 1.0]))
            .unwrap()
            .with_clusters(c)
            .unwrap();
        assert!(matches!(fit_lmm(&d, &FitConfig::default()), Err(Error::RankDeficient(_))));
        let comps = VarianceComponents::Clustered {
            sigma_u_sq: 1.0,
            sigma_s_sq: 0.0,
        };
        assert!(matches!(fit_gls(&d, comps, 1.0), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn scalar_blup() {
        // One entity with three observations: û = m σ² r̄ / (m σ² + φ).
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0, 9.0]);
        let c = ClusterIndex::new(vec![0, 0, 0, 1], vec![0, 0, 0, 0], 2, 1).unwrap();
        let d = Dataset::new(x, y).unwrap().with_clusters(c).unwrap();
        let comps = VarianceComponents::Clustered {
            sigma_u_sq: 2.0,
            sigma_s_sq: 0.0,
        };
        let f = fit_gls(&d, comps, 0.5).unwrap();
        let rbar = (1.0 + 2.0 + 4.0) / 3.0 - f.beta[0];
        let expected = 3.0 * 2.0 * rbar / (3.0 * 2.0 + 0.5);
        assert!((f.u_hat[0] - expected).abs() < 1e-12);
    }

    fn clustered_sample(seed: u64, su: f64, ss: f64) -> Dataset {
        let mut r = rng::stream(seed, 0, 0);
        let (q1, q2, n) = (20, 10, 400);
        let entity: Vec<usize> = (0..n).map(|i| i % q1).collect();
        let day: Vec<usize> = (0..n).map(|i| (i / q1) % q2).collect();
        let u: Vec<f64> = (0..q1).map(|_| su * rng::normal(&mut r)).collect();
        let s: Vec<f64> = (0..q2).map(|_| ss * rng::normal(&mut r)).collect();
        let x = DMatrix::from_fn(n, 2, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng::normal(&mut r)
            }
        });
        let y = DVector::from_fn(n, |i, _| {
            let e: f64 = rng::normal(&mut r);
            1.0 + 0.5 * x[(i, 1)] + u[entity[i]] + s[day[i]] + e
        });
        let c = ClusterIndex::new(entity, day, q1, q2).unwrap();
        Dataset::new(x, y).unwrap().with_clusters(c).unwrap()
    }

    #[test]
    fn ml_recovers_components_roughly() {
        let d = clustered_sample(3, 1.0, 0.7);
        let f = fit_lmm(&d, &FitConfig::default()).unwrap();
        let VarianceComponents::Clustered {
            sigma_u_sq,
            sigma_s_sq,
        } = f.components
        else {
            panic!()
        };
        assert!(sigma_u_sq > 0.3 && sigma_u_sq < 3.0, "{sigma_u_sq}");
        assert!(sigma_s_sq > 0.1 && sigma_s_sq < 2.0, "{sigma_s_sq}");
        assert!((f.phi() - 1.0).abs() < 0.25);
        assert!((f.beta[1] - 0.5).abs() < 0.15);
        assert!(f.report.gradient_norm < 1e-2, "{}", f.report.gradient_norm);
    }

    #[test]
    fn ml_optimum_beats_neighbours() {
        let d = clustered_sample(5, 0.8, 0.5);
        let f = fit_lmm(&d, &FitConfig::default()).unwrap();
        let nll = |c: VarianceComponents, phi: f64| {
            let v = marginal_covariance(&d, &c, phi).unwrap();
            let g = fit_gls(&d, c, phi).unwrap();
            let r = d.y() - d.x() * &g.beta;
            let vf = SpdFactor::new(&v, "v").unwrap();
            r.dot(&vf.solve_vec(&r)) + vf.ln_det()
        };
        let VarianceComponents::Clustered {
            sigma_u_sq: a,
            sigma_s_sq: b,
        } = f.components
        else {
            panic!()
        };
        let best = nll(f.components, f.phi());
        for (da, db, dp) in [(1.1, 1.0, 1.0), (0.9, 1.0, 1.0), (1.0, 1.1, 1.0), (1.0, 0.9, 1.0), (1.0, 1.0, 1.05)] {
            let c = VarianceComponents::Clustered {
                sigma_u_sq: a * da,
                sigma_s_sq: b * db,
            };
            assert!(nll(c, f.phi() * dp) >= best - 1e-9);
        }
    }

    #[test]
    fn spatial_fit_runs() {
        let mut r = rng::stream(9, 0, 0);
        let n = 60;
        let coords: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let c = (i / 10) as f64 * 3.0;
                [c + 0.3 * rng::normal(&mut r), 0.3 * rng::normal(&mut r)]
            })
            .collect();
        let region: Vec<usize> = (0..n).map(|i| i / 10).collect();
        let k = KernelParams::new(1.0, 1.0).unwrap();
        let l = crate::linalg::psd_factor(&k.matrix(&coords));
        let z = DVector::from_fn(l.ncols(), |_, _| rng::normal(&mut r));
        let delta = &l * z;
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = DVector::from_fn(n, |i, _| {
            let e: f64 = rng::normal(&mut r);
            delta[i] + 0.3 * e
        });
        let s = SpatialIndex::new(coords, region, 6).unwrap();
        let d = Dataset::new(x, y).unwrap().with_spatial(s).unwrap();
        let f = fit_lmm(&d, &FitConfig::default()).unwrap();
        assert!(matches!(f.components, VarianceComponents::Spatial(_)));
        assert!(f.u_hat.is_empty() && f.s_hat.is_empty());
    }
}
