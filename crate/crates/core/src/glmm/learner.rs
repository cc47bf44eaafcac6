use super::lmm::{fit_gls, fit_lmm};
use super::pql::{fit_glmm_fixed, fit_glmm_from};
use super::quadrature::{fit_gauss_hermite, GhQuadrature};
use super::{fit_glm, FitConfig, FittedGlmm, PredictMode, VarianceComponents};
use crate::error::{Error, Result};
use crate::model::{Dataset, Link, ModelFamily};

/// A training procedure: anything that can be fitted to a dataset and then
/// predict a linear predictor for a covariate row.
///
/// `predict` returns η on the link scale; the response-scale prediction is
/// `self.link().mean(η)`.
pub trait Learner: Send + Sync {
    type Model: Send + Sync;

    fn link(&self) -> Link;

    fn fit(&self, data: &Dataset) -> Result<Self::Model>;

    /// Fit starting from a previous model (hot start). Defaults to a cold fit.
    fn fit_warm(&self, data: &Dataset, _start: &Self::Model) -> Result<Self::Model> {
        self.fit(data)
    }

    fn predict(&self, model: &Self::Model, x: &[f64], mode: PredictMode) -> Result<f64>;

    /// Starting model for refits on data resembling the one `fit` came from.
    fn warm_model(&self, _fit: &FittedGlmm) -> Option<Self::Model> {
        None
    }
}

impl<L: Learner + ?Sized> Learner for &L {
    type Model = L::Model;

    fn link(&self) -> Link {
        (**self).link()
    }

    fn fit(&self, data: &Dataset) -> Result<Self::Model> {
        (**self).fit(data)
    }

    fn fit_warm(&self, data: &Dataset, start: &Self::Model) -> Result<Self::Model> {
        (**self).fit_warm(data, start)
    }

    fn predict(&self, model: &Self::Model, x: &[f64], mode: PredictMode) -> Result<f64> {
        (**self).predict(model, x, mode)
    }

    fn warm_model(&self, fit: &FittedGlmm) -> Option<Self::Model> {
        (**self).warm_model(fit)
    }
}

/// Mixed model matching the dataset's correlation index: LMM by marginal
/// likelihood for Gaussian-identity, PQL otherwise, plain GLM on iid data.
#[derive(Debug, Clone, Copy)]
pub struct GlmmLearner {
    pub family: ModelFamily,
    pub config: FitConfig,
    /// Refits start from the supplied model when true.
    pub warm_start: bool,
}

impl GlmmLearner {
    pub fn new(family: ModelFamily) -> Self {
        Self {
            family,
            config: FitConfig::default(),
            warm_start: true,
        }
    }
}

impl Learner for GlmmLearner {
    type Model = FittedGlmm;

    fn link(&self) -> Link {
        self.family.link
    }

    fn fit(&self, data: &Dataset) -> Result<FittedGlmm> {
        if self.family.is_gaussian_identity() {
            return fit_lmm(data, &self.config);
        }
        fit_glmm_from(data, self.family, &self.config, None)
    }

    fn fit_warm(&self, data: &Dataset, start: &FittedGlmm) -> Result<FittedGlmm> {
        if !self.warm_start || self.family.is_gaussian_identity() {
            return self.fit(data);
        }
        fit_glmm_from(data, self.family, &self.config, Some(start))
    }

    fn predict(&self, model: &FittedGlmm, x: &[f64], mode: PredictMode) -> Result<f64> {
        model.predict_linear(x, mode)
    }

    fn warm_model(&self, fit: &FittedGlmm) -> Option<FittedGlmm> {
        let same = fit.family.distribution == self.family.distribution && fit.family.link == self.family.link;
        (self.warm_start && same).then(|| fit.clone())
    }
}

/// Mixed model with variance components held fixed; only β and the random
/// effects are refitted.
#[derive(Debug, Clone, Copy)]
pub struct FixedComponentsLearner {
    pub family: ModelFamily,
    pub components: VarianceComponents,
    pub config: FitConfig,
}

impl FixedComponentsLearner {
    pub fn new(family: ModelFamily, components: VarianceComponents) -> Self {
        Self {
            family,
            components,
            config: FitConfig::default(),
        }
    }

    /// Freeze the components (and φ) of an existing fit.
    pub fn from_fit(fit: &FittedGlmm) -> Self {
        Self::new(fit.family, fit.components)
    }
}

impl Learner for FixedComponentsLearner {
    type Model = FittedGlmm;

    fn link(&self) -> Link {
        self.family.link
    }

    fn fit(&self, data: &Dataset) -> Result<FittedGlmm> {
        if self.family.is_gaussian_identity() {
            return fit_gls(data, self.components, self.family.phi);
        }
        fit_glmm_fixed(data, self.family, self.components, &self.config)
    }

    fn predict(&self, model: &FittedGlmm, x: &[f64], mode: PredictMode) -> Result<f64> {
        model.predict_linear(x, mode)
    }
}

/// Plain GLM ignoring any correlation index.
#[derive(Debug, Clone, Copy)]
pub struct GlmLearner {
    pub family: ModelFamily,
    pub config: FitConfig,
}

impl GlmLearner {
    pub fn new(family: ModelFamily) -> Self {
        Self {
            family,
            config: FitConfig::default(),
        }
    }
}

impl Learner for GlmLearner {
    type Model = FittedGlmm;

    fn link(&self) -> Link {
        self.family.link
    }

    fn fit(&self, data: &Dataset) -> Result<FittedGlmm> {
        let iid = Dataset::new(data.x().clone(), data.y().clone())?;
        fit_glm(&iid, self.family, &self.config)
    }

    fn predict(&self, model: &FittedGlmm, x: &[f64], _mode: PredictMode) -> Result<f64> {
        model.predict_linear(x, PredictMode::NewEntity)
    }
}

/// Single random-intercept Bernoulli-logit model fitted by Gauss–Hermite
/// marginal likelihood.
#[derive(Debug, Clone)]
pub struct GaussHermiteLearner {
    pub quadrature: GhQuadrature,
    pub config: FitConfig,
}

impl Default for GaussHermiteLearner {
    fn default() -> Self {
        Self {
            quadrature: GhQuadrature::default(),
            config: FitConfig::default(),
        }
    }
}

impl Learner for GaussHermiteLearner {
    type Model = FittedGlmm;

    fn link(&self) -> Link {
        Link::Sigmoid
    }

    fn fit(&self, data: &Dataset) -> Result<FittedGlmm> {
        fit_gauss_hermite(data, &self.quadrature, &self.config)
    }

    fn predict(&self, model: &FittedGlmm, x: &[f64], mode: PredictMode) -> Result<f64> {
        model.predict_linear(x, mode)
    }
}

/// Always predicts the same response-scale value.
#[derive(Debug, Clone, Copy)]
pub struct ConstantLearner {
    pub value: f64,
    pub link: Link,
}

impl ConstantLearner {
    pub fn new(value: f64, link: Link) -> Result<Self> {
        let eta = link.linear_predictor(value);
        if !eta.is_finite() {
            return Err(Error::Domain(format!("{value} is outside the range of the {link:?} link")));
        }
        Ok(Self { value, link })
    }
}

impl Learner for ConstantLearner {
    type Model = f64;

    fn link(&self) -> Link {
        self.link
    }

    fn fit(&self, _data: &Dataset) -> Result<f64> {
        Ok(self.link.linear_predictor(self.value))
    }

    fn predict(&self, model: &f64, _x: &[f64], _mode: PredictMode) -> Result<f64> {
        Ok(*model)
    }
}

/// Predicts the training-fold mean response.
#[derive(Debug, Clone, Copy)]
pub struct MeanLearner {
    pub link: Link,
}

impl Learner for MeanLearner {
    type Model = f64;

    fn link(&self) -> Link {
        self.link
    }

    fn fit(&self, data: &Dataset) -> Result<f64> {
        let eta = self.link.linear_predictor(data.y().mean());
        if !eta.is_finite() {
            return Err(Error::Domain("training mean is outside the link range".into()));
        }
        Ok(eta)
    }

    fn predict(&self, model: &f64, _x: &[f64], _mode: PredictMode) -> Result<f64> {
        Ok(*model)
    }
}
