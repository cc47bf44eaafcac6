use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use super::config::{SimConfig, SimKind};
use crate::cv::{GenerativeTruth, TrueEffects};
use crate::error::{Error, Result};
use crate::glmm::KernelParams;
use crate::model::{ClusterIndex, Dataset, SpatialIndex};
use crate::rng::normal;

/// A simulated training set with the law that generated it.
#[derive(Debug, Clone)]
pub struct SimData {
    pub data: Dataset,
    pub truth: GenerativeTruth,
}

pub fn generate<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<SimData> {
    if cfg.kind.is_clustered() {
        gen_clustered(cfg, rng)
    } else {
        gen_spatial(cfg, rng)
    }
}

/// Entity and day labels with exactly n/q1 rows per entity and n/q2 per day;
/// cells get ⌊n/(q1 q2)⌋ or one more rows.
fn balanced_cells<R: Rng + ?Sized>(n: usize, q1: usize, q2: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let base = n / (q1 * q2);
    let extra = n - base * q1 * q2;
    let per_entity = extra / q1;
    let mut count = vec![vec![base; q2]; q1];
    for (e, row) in count.iter_mut().enumerate() {
        for t in 0..per_entity {
            row[(e * per_entity + t) % q2] += 1;
        }
    }
    let mut ent_label: Vec<usize> = (0..q1).collect();
    let mut day_label: Vec<usize> = (0..q2).collect();
    ent_label.shuffle(rng);
    day_label.shuffle(rng);
    let mut rows = Vec::with_capacity(n);
    for (e, row) in count.iter().enumerate() {
        for (d, &c) in row.iter().enumerate() {
            rows.extend(std::iter::repeat_n((ent_label[e], day_label[d]), c));
        }
    }
    rows.shuffle(rng);
    rows.into_iter().unzip()
}

fn design(cfg: &SimConfig, z: DMatrix<f64>) -> DMatrix<f64> {
    match cfg.intercept {
        Some(_) => {
            let n = z.nrows();
            let mut x = DMatrix::from_element(n, cfg.p + 1, 1.0);
            x.view_mut((0, 1), (n, cfg.p)).copy_from(&z);
            x
        }
        None => z,
    }
}

fn coefficients(cfg: &SimConfig) -> DVector<f64> {
    let mut b: Vec<f64> = cfg.intercept.into_iter().collect();
    b.extend(cfg.beta());
    DVector::from_vec(b)
}

/// Crossed entity/day design: covariates load on per-entity and per-day
/// factors, η = xᵀβ + u_entity + s_day. Poisson covariates are pushed
/// through Φ(·) − 1/2 to get uniform marginals on (−1/2, 1/2).
pub fn gen_clustered<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<SimData> {
    if !cfg.kind.is_clustered() {
        return Err(Error::InvalidArgument(format!("{} is not a clustered design", cfg.kind_name())));
    }
    cfg.validate()?;
    let (n, p, q1, q2) = (cfg.n, cfg.p, cfg.q1, cfg.q2);
    let (entity, day) = balanced_cells(n, q1, q2, rng);
    let a = DMatrix::from_fn(q1, p, |_, _| normal(rng));
    let b = DMatrix::from_fn(q2, p, |_, _| normal(rng));
    let own = (1.0 - 2.0 * cfg.rho * cfg.rho).sqrt();
    let mut z = DMatrix::from_fn(n, p, |i, j| cfg.rho * (a[(entity[i], j)] + b[(day[i], j)]) + own * normal(rng));
    if cfg.kind == SimKind::ClusteredPoisson {
        let phi = Normal::standard();
        z.apply(|v| *v = phi.cdf(*v) - 0.5);
    }
    let x = design(cfg, z);
    let fixed = &x * coefficients(cfg);
    let u = DVector::from_fn(q1, |_, _| cfg.sigma_u * normal(rng));
    let s = DVector::from_fn(q2, |_, _| cfg.sigma_s * normal(rng));
    let eta: Vec<f64> = (0..n).map(|i| fixed[i] + u[entity[i]] + s[day[i]]).collect();
    let family = cfg.family();
    let y = DVector::from_vec(family.sample(&eta, rng));
    let data = Dataset::new(x, y)?.with_clusters(ClusterIndex::new(entity, day, q1, q2)?)?;
    Ok(SimData {
        data,
        truth: GenerativeTruth {
            family,
            fixed,
            effects: TrueEffects::Clustered {
                sigma_u: cfg.sigma_u,
                sigma_s: cfg.sigma_s,
                u,
                s,
            },
        },
    })
}

/// Regions with centers uniform on [0, extent]², sites scattered around
/// their center, a Gaussian-kernel field δ and responses given δ.
pub fn gen_spatial<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<SimData> {
    if cfg.kind.is_clustered() {
        return Err(Error::InvalidArgument(format!("{} is not a spatial design", cfg.kind_name())));
    }
    cfg.validate()?;
    let (n, p, q) = (cfg.n, cfg.p, cfg.q);
    let centers: Vec<[f64; 2]> = (0..q)
        .map(|_| [rng.random::<f64>() * cfg.extent, rng.random::<f64>() * cfg.extent])
        .collect();
    let region: Vec<usize> = (0..n).map(|i| i * q / n).collect();
    let coords: Vec<[f64; 2]> = region
        .iter()
        .map(|&r| {
            let c = centers[r];
            [c[0] + cfg.point_sd * normal(rng), c[1] + cfg.point_sd * normal(rng)]
        })
        .collect();
    let a = DMatrix::from_fn(q, p, |_, _| normal(rng));
    let own = (1.0 - cfg.rho * cfg.rho).sqrt();
    let z = DMatrix::from_fn(n, p, |i, j| cfg.rho * a[(region[i], j)] + own * normal(rng));
    let x = design(cfg, z);
    let fixed = &x * coefficients(cfg);
    let kernel = KernelParams::new(cfg.sigma_out_sq, cfg.sigma_in_sq)?;
    let family = cfg.family();
    let truth = GenerativeTruth::spatial(family, fixed.clone(), kernel, &coords);
    let TrueEffects::Spatial { factor, .. } = &truth.effects else {
        unreachable!("spatial truth");
    };
    let zf = DVector::from_fn(factor.ncols(), |_, _| normal(rng));
    let eta = fixed + factor * zf;
    let y = DVector::from_vec(family.sample(eta.as_slice(), rng));
    let data = Dataset::new(x, y)?.with_spatial(SpatialIndex::new(coords, region, q)?)?;
    Ok(SimData { data, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn exact_entity_and_day_counts() {
        let cfg = SimConfig::default();
        for seed in 0..5 {
            let d = gen_clustered(&cfg, &mut stream(seed, 0, 0)).unwrap().data;
            let c = d.clusters().unwrap();
            assert_eq!(d.n(), 110);
            for e in 0..10 {
                assert_eq!(c.entity().iter().filter(|&&v| v == e).count(), 11);
            }
            for s in 0..5 {
                assert_eq!(c.day().iter().filter(|&&v| v == s).count(), 22);
            }
            for e in 0..10 {
                for s in 0..5 {
                    let m = (0..110).filter(|&i| c.entity()[i] == e && c.day()[i] == s).count();
                    assert!((2..=3).contains(&m));
                }
            }
            assert!(d.y().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SimConfig::defaults(SimKind::ClusteredPoisson);
        let a = gen_clustered(&cfg, &mut stream(3, 0, 0)).unwrap().data;
        let b = gen_clustered(&cfg, &mut stream(3, 0, 0)).unwrap().data;
        let c = gen_clustered(&cfg, &mut stream(4, 0, 0)).unwrap().data;
        assert_eq!(a, b);
        assert_ne!(a.x(), c.x());
        assert_eq!(a.p(), 21);
        assert!(a.x().column(0).iter().all(|&v| v == 1.0));
        assert!(a.x().columns(1, 20).iter().all(|&v| v.abs() < 0.5));
    }

    #[test]
    fn poisson_mean_matches_the_generative_law() {
        // Pooled mean of Y against E[exp(η)] averaged over the same designs,
        // with the lognormal factor exp((σ_u² + σ_s²)/2) for the effects.
        let cfg = SimConfig::defaults(SimKind::ClusteredPoisson);
        let (mut ys, mut expected) = (0.0, 0.0);
        let mut count = 0.0;
        for seed in 0..91 {
            let sd = gen_clustered(&cfg, &mut stream(seed, 0, 0)).unwrap();
            ys += sd.data.y().sum();
            let f = ((cfg.sigma_u.powi(2) + cfg.sigma_s.powi(2)) / 2.0).exp();
            expected += sd.truth.fixed.iter().map(|e| e.exp() * f).sum::<f64>();
            count += sd.data.n() as f64;
        }
        let (m, e) = (ys / count, expected / count);
        assert!((m - e).abs() < 0.05 * e, "{m} vs {e}");
    }

    #[test]
    fn spatial_limits() {
        let mut cfg = SimConfig::defaults(SimKind::SpatialGaussian);
        cfg.sigma_in_sq = 0.0;
        let sd = gen_spatial(&cfg, &mut stream(1, 0, 0)).unwrap();
        let TrueEffects::Spatial { factor, .. } = &sd.truth.effects else { panic!() };
        let k = factor * factor.transpose();
        assert!(k.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        cfg.sigma_in_sq = 1e6;
        let sd = gen_spatial(&cfg, &mut stream(1, 0, 0)).unwrap();
        let TrueEffects::Spatial { factor, .. } = &sd.truth.effects else { panic!() };
        let k = factor * factor.transpose();
        assert!((k - DMatrix::identity(100, 100)).abs().max() < 1e-6);
        let s = sd.data.spatial().unwrap();
        assert_eq!(s.q(), 10);
        assert!(s.coords().iter().all(|c| c[0] > -1.0 && c[0] < 11.0));
    }
}
