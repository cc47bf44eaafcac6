use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::bias::{BootstrapConfig, Estimator};
use crate::cv::Scenario;
use crate::error::{Error, Result};
use crate::model::{Loss, ModelFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    #[default]
    ClusteredLogistic,
    ClusteredPoisson,
    SpatialGaussian,
    SpatialLogistic,
}

impl SimKind {
    pub fn is_clustered(self) -> bool {
        matches!(self, SimKind::ClusteredLogistic | SimKind::ClusteredPoisson)
    }

    pub fn family(self, phi: f64) -> ModelFamily {
        match self {
            SimKind::ClusteredLogistic | SimKind::SpatialLogistic => ModelFamily::bernoulli_logit(),
            SimKind::ClusteredPoisson => ModelFamily::poisson_log(),
            SimKind::SpatialGaussian => ModelFamily::gaussian(phi),
        }
    }

    fn name(self) -> &'static str {
        match self {
            SimKind::ClusteredLogistic => "clustered_logistic",
            SimKind::ClusteredPoisson => "clustered_poisson",
            SimKind::SpatialGaussian => "spatial_gaussian",
            SimKind::SpatialLogistic => "spatial_logistic",
        }
    }
}

/// Coefficients: one value repeated over all covariates, or a full vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Constant(f64),
    Vector(Vec<f64>),
}

/// Parameters of a synthetic design and its replication protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub kind: SimKind,
    pub n: usize,
    /// Covariates, not counting the intercept column.
    pub p: usize,
    /// Entities and days (clustered designs).
    pub q1: usize,
    pub q2: usize,
    /// Regions (spatial designs).
    pub q: usize,
    pub beta: BetaSpec,
    /// Intercept; `None` fits and simulates without an intercept column.
    pub intercept: Option<f64>,
    pub sigma_u: f64,
    pub sigma_s: f64,
    pub sigma_out_sq: f64,
    pub sigma_in_sq: f64,
    /// Gaussian dispersion (spatial_gaussian only).
    pub phi: f64,
    /// Loading of each covariate on its entity and day (or region) factor.
    pub rho: f64,
    /// Spread of the sites around their region center.
    pub point_sd: f64,
    /// Side of the square holding the region centers.
    pub extent: f64,
    pub scenario: Scenario,
    #[serde(alias = "K_folds")]
    pub k_folds: usize,
    pub reps: usize,
    /// Fresh test-response draws per repetition for GenErr.
    pub test_reps: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn defaults(kind: SimKind) -> Self {
        let base = Self {
            kind,
            n: 110,
            p: 10,
            q1: 10,
            q2: 5,
            q: 10,
            beta: BetaSpec::Constant(0.5),
            intercept: None,
            sigma_u: 1.0,
            sigma_s: 0.5,
            sigma_out_sq: 1.0,
            sigma_in_sq: 1.0,
            phi: 1.0,
            rho: 0.3,
            point_sd: 0.05,
            extent: 10.0,
            scenario: Scenario::NewAll,
            k_folds: 11,
            reps: 300,
            test_reps: 20,
            seed: 0,
        };
        match kind {
            SimKind::ClusteredLogistic => base,
            SimKind::ClusteredPoisson => Self {
                p: 20,
                beta: BetaSpec::Constant(0.2),
                intercept: Some(0.2),
                sigma_u: 0.7,
                sigma_s: 0.4,
                ..base
            },
            SimKind::SpatialGaussian | SimKind::SpatialLogistic => Self {
                n: 100,
                p: 5,
                k_folds: 10,
                ..base
            },
        }
    }

    /// Parse a JSON object, filling absent fields from the defaults of its
    /// `kind` (clustered_logistic when absent).
    pub fn from_value(v: Value) -> Result<Self> {
        let Value::Object(over) = v else {
            return Err(Error::InvalidArgument("simulation config must be a JSON object".into()));
        };
        let kind = match over.get("kind") {
            Some(k) => serde_json::from_value(k.clone())?,
            None => SimKind::default(),
        };
        let Value::Object(mut merged) = serde_json::to_value(Self::defaults(kind))? else {
            unreachable!("config serializes to an object");
        };
        merged.extend(over);
        let cfg: Self = serde_json::from_value(Value::Object(merged))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(s)?)
    }

    pub fn family(&self) -> ModelFamily {
        self.kind.family(self.phi)
    }

    pub fn beta(&self) -> Vec<f64> {
        match &self.beta {
            BetaSpec::Constant(b) => vec![*b; self.p],
            BetaSpec::Vector(v) => v.clone(),
        }
    }

    /// Columns of the simulated design: the intercept (if any) then p covariates.
    pub fn columns(&self) -> usize {
        self.p + self.intercept.is_some() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 || self.p == 0 {
            return bad("n and p must be positive".into());
        }
        if let BetaSpec::Vector(v) = &self.beta {
            if v.len() != self.p {
                return bad(format!("beta has {} entries for p = {}", v.len(), self.p));
            }
        }
        if self.beta().iter().chain(self.intercept.iter()).any(|b| !b.is_finite()) {
            return bad("coefficients must be finite".into());
        }
        for (name, v) in [
            ("sigma_u", self.sigma_u),
            ("sigma_s", self.sigma_s),
            ("sigma_out_sq", self.sigma_out_sq),
            ("sigma_in_sq", self.sigma_in_sq),
            ("point_sd", self.point_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) || !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad("phi and extent must be positive".into());
        }
        if self.kind.is_clustered() {
            if self.q1 == 0 || self.q2 == 0 {
                return bad("q1 and q2 must be positive".into());
            }
            if self.n % self.q1 != 0 || self.n % self.q2 != 0 {
                return bad(format!(
                    "n = {} cannot be split evenly over {} entities and {} days",
                    self.n, self.q1, self.q2
                ));
            }
            if !(self.rho >= 0.0 && 2.0 * self.rho * self.rho < 1.0) {
                return bad(format!("rho = {} leaves no idiosyncratic covariate variance", self.rho));
            }
        } else {
            if self.q < 2 || self.n < self.q {
                return bad(format!("spatial designs need 2 <= q <= n, got q = {}", self.q));
            }
            if !(self.rho >= 0.0 && self.rho < 1.0) {
                return bad(format!("rho must lie in [0, 1), got {}", self.rho));
            }
            if self.scenario == Scenario::SharedEntities {
                return bad("shared_entities needs a clustered design".into());
            }
        }
        if self.k_folds < 2 || self.k_folds > self.n {
            return bad(format!("K_folds must lie in [2, n], got {}", self.k_folds));
        }
        if self.reps == 0 || self.test_reps == 0 {
            return bad("reps and test_reps must be positive".into());
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        self.kind.name()
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::defaults(SimKind::default())
    }
}

fn de_sim<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<SimConfig, D::Error> {
    SimConfig::from_value(Value::deserialize(d)?).map_err(serde::de::Error::custom)
}

/// A simulation study: design, losses, estimators and the models compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(deserialize_with = "de_sim")]
    pub sim: SimConfig,
    pub losses: Vec<Loss>,
    pub estimators: Vec<Estimator>,
    pub bootstrap: BootstrapConfig,
    /// Numbers of leading covariates kept by each candidate model; empty
    /// fits the full design only. The intercept column is always kept.
    pub feature_subsets: Vec<usize>,
    /// Compute ROC/AUC with threshold-wise corrections (binary designs).
    pub roc: bool,
    pub roc_grid: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            losses: vec![Loss::CrossEntropy, Loss::ZeroOne],
            estimators: vec![Estimator::Fast],
            bootstrap: BootstrapConfig::default(),
            feature_subsets: Vec::new(),
            roc: false,
            roc_grid: crate::roc::DEFAULT_GRID_POINTS,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Covariate counts of the compared models.
    pub fn models(&self) -> Vec<usize> {
        if self.feature_subsets.is_empty() {
            vec![self.sim.p]
        } else {
            self.feature_subsets.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.bootstrap.validate()?;
        if self.losses.is_empty() {
            return Err(Error::InvalidArgument("at least one loss is required".into()));
        }
        if let Some(e) = self.estimators.iter().find(|e| **e == Estimator::Analytic) {
            return Err(Error::InvalidArgument(format!(
                "estimator {e:?} is not available in experiments (use empirical, fast or canonical)"
            )));
        }
        if let Some(&m) = self.models().iter().find(|&&m| m == 0 || m > self.sim.p) {
            return Err(Error::InvalidArgument(format!(
                "feature subset {m} is outside 1..={}",
                self.sim.p
            )));
        }
        if self.roc && self.roc_grid < 2 {
            return Err(Error::InvalidArgument("roc_grid must be at least 2".into()));
        }
        let family = self.sim.family();
        for l in &self.losses {
            let ok = l.supports(&family);
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "loss {l} does not fit the {} design",
                    self.sim.kind_name()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_defaults_are_merged() {
        let c = SimConfig::from_json(r#"{"kind": "clustered_poisson", "reps": 7}"#).unwrap();
        assert_eq!((c.p, c.reps, c.intercept), (20, 7, Some(0.2)));
        assert_eq!(c.beta(), vec![0.2; 20]);
        assert_eq!((c.sigma_u, c.sigma_s), (0.7, 0.4));
    }

    #[test]
    fn logistic_defaults() {
        let c = SimConfig::default();
        assert_eq!((c.n, c.p, c.q1, c.q2, c.k_folds), (110, 10, 10, 5, 11));
        assert_eq!((c.sigma_u, c.sigma_s, c.intercept), (1.0, 0.5, None));
        assert_eq!(c.beta(), vec![0.5; 10]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SimConfig::from_json(r#"{"n": 111}"#).is_err());
        assert!(SimConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(SimConfig::from_json(r#"{"beta": [1.0, 2.0]}"#).is_err());
        assert!(SimConfig::from_json(r#"{"K_folds": 1}"#).is_err());
        let e = SimConfig::from_json(r#"{"kind": "spatial_gaussian", "scenario": "shared_entities"}"#);
        assert!(e.unwrap_err().is_config_error());
    }

    #[test]
    fn experiment_config() {
        let c = ExperimentConfig::from_json(
            r#"{"sim": {"kind": "clustered_logistic", "reps": 3}, "feature_subsets": [2, 7, 10]}"#,
        )
        .unwrap();
        assert_eq!(c.sim.reps, 3);
        assert_eq!(c.models(), vec![2, 7, 10]);
        assert!(ExperimentConfig::from_json(r#"{"feature_subsets": [11]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"losses": ["poisson_nll"]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"estimators": ["analytic"]}"#).is_err());
    }
}
