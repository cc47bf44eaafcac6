use rand::Rng;
use rand_distr::{Distribution as _, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Response distribution of the exponential family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Bernoulli,
    Poisson,
    Gaussian,
}

/// Mean function mapping the mixed linear predictor to the response mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Sigmoid,
    Log,
    Identity,
    Probit,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

impl Link {
    /// g(eta).
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Link::Sigmoid => sigmoid(eta),
            Link::Log => eta.exp(),
            Link::Identity => eta,
            Link::Probit => std_normal().cdf(eta),
        }
    }

    /// g'(eta).
    pub fn mean_derivative(self, eta: f64) -> f64 {
        match self {
            Link::Sigmoid => {
                let s = sigmoid(eta);
                s * (1.0 - s)
            }
            Link::Log => eta.exp(),
            Link::Identity => 1.0,
            Link::Probit => std_normal().pdf(eta),
        }
    }

    /// g⁻¹(mu), the linear predictor producing mean `mu`.
    pub fn linear_predictor(self, mu: f64) -> f64 {
        match self {
            Link::Sigmoid => (mu / (1.0 - mu)).ln(),
            Link::Log => mu.ln(),
            Link::Identity => mu,
            Link::Probit => std_normal().inverse_cdf(mu),
        }
    }
}

/// Family F, mean function g and dispersion φ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelFamily {
    pub distribution: Distribution,
    pub link: Link,
    pub phi: f64,
}

impl ModelFamily {
    pub fn new(distribution: Distribution, link: Link, phi: f64) -> Result<Self> {
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::InvalidArgument(format!("dispersion must be positive, got {phi}")));
        }
        if matches!(distribution, Distribution::Bernoulli | Distribution::Poisson) && phi != 1.0 {
            return Err(Error::InvalidArgument(
                "dispersion is fixed at 1 for Bernoulli and Poisson".into(),
            ));
        }
        if distribution == Distribution::Poisson && matches!(link, Link::Sigmoid | Link::Probit) {
            return Err(Error::InvalidArgument("Poisson needs a positive-valued link".into()));
        }
        if distribution == Distribution::Bernoulli && matches!(link, Link::Log | Link::Identity) {
            return Err(Error::InvalidArgument("Bernoulli needs a (0,1)-valued link".into()));
        }
        Ok(Self {
            distribution,
            link,
            phi,
        })
    }

    pub fn bernoulli_logit() -> Self {
        Self {
            distribution: Distribution::Bernoulli,
            link: Link::Sigmoid,
            phi: 1.0,
        }
    }

    pub fn bernoulli_probit() -> Self {
        Self {
            distribution: Distribution::Bernoulli,
            link: Link::Probit,
            phi: 1.0,
        }
    }

    pub fn poisson_log() -> Self {
        Self {
            distribution: Distribution::Poisson,
            link: Link::Log,
            phi: 1.0,
        }
    }

    pub fn gaussian(phi: f64) -> Self {
        Self {
            distribution: Distribution::Gaussian,
            link: Link::Identity,
            phi,
        }
    }

    pub fn is_canonical(&self) -> bool {
        matches!(
            (self.distribution, self.link),
            (Distribution::Bernoulli, Link::Sigmoid)
                | (Distribution::Poisson, Link::Log)
                | (Distribution::Gaussian, Link::Identity)
        )
    }

    pub fn is_gaussian_identity(&self) -> bool {
        self.distribution == Distribution::Gaussian && self.link == Link::Identity
    }

    /// Conditional variance Var(y | eta) = φ·v(μ).
    pub fn variance(&self, mu: f64) -> f64 {
        match self.distribution {
            Distribution::Bernoulli => mu * (1.0 - mu),
            Distribution::Poisson => mu,
            Distribution::Gaussian => self.phi,
        }
    }

    /// IRLS weight g'²/(φ v) and score contribution g'(y − μ)/(φ v) at `eta`.
    pub fn working(&self, eta: f64, y: f64) -> (f64, f64) {
        let mu = self.link.mean(eta);
        if self.is_canonical() {
            // g' = φ v, so the ratios simplify without dividing by a tiny v.
            return match self.distribution {
                Distribution::Gaussian => (1.0 / self.phi, (y - mu) / self.phi),
                _ => (self.link.mean_derivative(eta), y - mu),
            };
        }
        let d = self.link.mean_derivative(eta);
        let v = (self.phi * self.variance(mu)).max(1e-300);
        (d * d / v, d * (y - mu) / v)
    }

    /// One draw per observation from F(g(eta_i), φ).
    pub fn sample<R: Rng + ?Sized>(&self, eta: &[f64], rng: &mut R) -> Vec<f64> {
        eta.iter().map(|&e| self.sample_one(self.link.mean(e), rng)).collect()
    }

    pub(crate) fn sample_one<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> f64 {
        match self.distribution {
            Distribution::Bernoulli => {
                let u: f64 = rng.random();
                if u < mu {
                    1.0
                } else {
                    0.0
                }
            }
            Distribution::Poisson => {
                if !(mu > 0.0) {
                    0.0
                } else {
                    match Poisson::new(mu) {
                        Ok(d) => d.sample(rng),
                        Err(_) => mu.round(),
                    }
                }
            }
            Distribution::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                mu + self.phi.sqrt() * z
            }
        }
    }

    /// Validate that every response lies in the support of the distribution.
    pub fn check_responses(&self, y: &[f64]) -> Result<()> {
        for (i, &v) in y.iter().enumerate() {
            let ok = match self.distribution {
                Distribution::Bernoulli => v == 0.0 || v == 1.0,
                Distribution::Poisson => v >= 0.0 && v.fract() == 0.0,
                Distribution::Gaussian => v.is_finite(),
            };
            if !ok {
                return Err(Error::Domain(format!(
                    "response {v} at row {i} is outside the {:?} support",
                    self.distribution
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn canonical_pairs() {
        assert!(ModelFamily::bernoulli_logit().is_canonical());
        assert!(ModelFamily::poisson_log().is_canonical());
        assert!(ModelFamily::gaussian(1.0).is_canonical());
        assert!(!ModelFamily::bernoulli_probit().is_canonical());
    }

    #[test]
    fn links_are_increasing_with_matching_derivatives() {
        for link in [Link::Sigmoid, Link::Log, Link::Identity, Link::Probit] {
            let mut prev = f64::NEG_INFINITY;
            for k in -40..=40 {
                let eta = k as f64 * 0.25;
                let m = link.mean(eta);
                assert!(m > prev || (m == prev && m == 1.0), "{link:?}");
                prev = m;
                let h = 1e-6;
                let fd = (link.mean(eta + h) - link.mean(eta - h)) / (2.0 * h);
                let d = link.mean_derivative(eta);
                assert!((fd - d).abs() <= 1e-6 * (1.0 + d.abs()), "{link:?} at {eta}");
            }
        }
    }

    #[test]
    fn inverse_link_round_trips() {
        for link in [Link::Sigmoid, Link::Log, Link::Identity, Link::Probit] {
            for &eta in &[-3.0, -0.5, 0.0, 1.2, 4.0] {
                let back = link.linear_predictor(link.mean(eta));
                assert!((back - eta).abs() < 1e-9, "{link:?}");
            }
        }
    }

    #[test]
    fn degenerate_gaussian_noise_returns_mean() {
        let fam = ModelFamily::gaussian(1e-300);
        let mut r = rng::stream(1, 0, 0);
        let y = fam.sample(&[1.5], &mut r);
        assert!((y[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn saturated_bernoulli_draws_one() {
        let fam = ModelFamily::bernoulli_logit();
        let mut r = rng::stream(2, 0, 0);
        for _ in 0..1000 {
            assert_eq!(fam.sample(&[50.0], &mut r), vec![1.0]);
        }
    }

    #[test]
    fn poisson_mean_one_at_zero_predictor() {
        let fam = ModelFamily::poisson_log();
        let mut r = rng::stream(3, 0, 0);
        let eta = vec![0.0; 100_000];
        let y = fam.sample(&eta, &mut r);
        assert!(y.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn sampling_is_deterministic_in_stream_state() {
        let fam = ModelFamily::poisson_log();
        let eta = vec![0.3; 50];
        let a = fam.sample(&eta, &mut rng::stream(9, 1, 1));
        let b = fam.sample(&eta, &mut rng::stream(9, 1, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_configuration() {
        assert!(ModelFamily::new(Distribution::Poisson, Link::Sigmoid, 1.0).is_err());
        assert!(ModelFamily::new(Distribution::Gaussian, Link::Identity, 0.0).is_err());
        assert!(ModelFamily::new(Distribution::Bernoulli, Link::Sigmoid, 2.0).is_err());
    }
}
