//! Losses of the form L(y, ŷ) = L1(ŷ) − L2(ŷ)·y + L3(y).
//!
//! Only the `L2` component enters the bias of cross-validation; `L1` and `L3`
//! cancel between the CV estimate and the generalization error.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::family::{Distribution, Link, ModelFamily};
use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logarithms.
pub const PROBABILITY_CLAMP: f64 = 1e-12;

/// Threshold used when converting a probability into a 0/1 label.
pub const LABEL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
    CrossEntropy,
    ZeroOne,
    Hinge,
    PoissonNll,
}

/// Scale on which a loss expects its prediction ŷ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSpace {
    Probability,
    Label,
    Score,
    Mean,
    LinearPredictor,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Explicit probability → label step (1 when `prob > threshold`).
pub fn threshold_label(prob: f64, threshold: f64) -> f64 {
    if prob > threshold {
        1.0
    } else {
        0.0
    }
}

impl Loss {
    pub const ALL: [Loss; 5] = [
        Loss::Squared,
        Loss::CrossEntropy,
        Loss::ZeroOne,
        Loss::Hinge,
        Loss::PoissonNll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Loss::Squared => "squared",
            Loss::CrossEntropy => "cross_entropy",
            Loss::ZeroOne => "zero_one",
            Loss::Hinge => "hinge",
            Loss::PoissonNll => "poisson_nll",
        }
    }

    pub fn prediction_space(self) -> PredictionSpace {
        match self {
            Loss::Squared => PredictionSpace::Mean,
            Loss::CrossEntropy => PredictionSpace::Probability,
            Loss::ZeroOne => PredictionSpace::Label,
            Loss::Hinge => PredictionSpace::Score,
            Loss::PoissonNll => PredictionSpace::Mean,
        }
    }

    fn check(self, yhat: f64) -> Result<f64> {
        let bad = |what: &str| {
            Err(Error::Domain(format!(
                "{} prediction {yhat} is outside {what}",
                self.name()
            )))
        };
        if !yhat.is_finite() {
            return bad("the real line");
        }
        match self {
            Loss::Squared | Loss::Hinge => Ok(yhat),
            Loss::CrossEntropy => {
                if !(0.0..=1.0).contains(&yhat) {
                    bad("[0, 1]")
                } else {
                    Ok(yhat.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP))
                }
            }
            Loss::ZeroOne => {
                if yhat == 0.0 || yhat == 1.0 {
                    Ok(yhat)
                } else {
                    bad("{0, 1}")
                }
            }
            Loss::PoissonNll => {
                if yhat > 0.0 {
                    Ok(yhat)
                } else {
                    bad("(0, inf)")
                }
            }
        }
    }

    /// Whether the loss makes sense for responses of `family`. Squared loss
    /// applies to every family.
    pub fn supports(self, family: &ModelFamily) -> bool {
        match self {
            Loss::CrossEntropy | Loss::ZeroOne | Loss::Hinge => family.distribution == Distribution::Bernoulli,
            Loss::PoissonNll => family.distribution == Distribution::Poisson,
            Loss::Squared => true,
        }
    }

    pub fn l1(self, yhat: f64) -> Result<f64> {
        let v = self.check(yhat)?;
        Ok(match self {
            Loss::Squared => v * v,
            Loss::CrossEntropy => -(1.0 - v).ln(),
            Loss::ZeroOne => v,
            Loss::Hinge => relu(1.0 + v),
            Loss::PoissonNll => v,
        })
    }

    pub fn l2(self, yhat: f64) -> Result<f64> {
        let v = self.check(yhat)?;
        Ok(match self {
            Loss::Squared => 2.0 * v,
            Loss::CrossEntropy => (v / (1.0 - v)).ln(),
            Loss::ZeroOne => 2.0 * v - 1.0,
            Loss::Hinge => relu(1.0 + v) - relu(1.0 - v),
            Loss::PoissonNll => v.ln(),
        })
    }

    pub fn l3(self, y: f64) -> f64 {
        match self {
            Loss::Squared => y * y,
            _ => 0.0,
        }
    }

    /// L(y, ŷ) = L1(ŷ) − L2(ŷ)·y + L3(y).
    pub fn eval(self, y: f64, yhat: f64) -> Result<f64> {
        Ok(self.l1(yhat)? - self.l2(yhat)? * y + self.l3(y))
    }

    /// Convex conjugate G with G' = L2⁻¹, for losses that are (proportional
    /// to) a negative log likelihood of the natural parameter.
    pub fn conjugate(self, theta: f64) -> Option<f64> {
        match self {
            Loss::Squared => Some(theta * theta / 4.0),
            Loss::CrossEntropy => Some(if theta > 0.0 {
                theta + (-theta).exp().ln_1p()
            } else {
                theta.exp().ln_1p()
            }),
            Loss::PoissonNll => Some(theta.exp()),
            Loss::ZeroOne | Loss::Hinge => None,
        }
    }

    /// Map a linear predictor to this loss's prediction space.
    pub fn prediction(self, eta: f64, link: Link) -> f64 {
        match self.prediction_space() {
            PredictionSpace::Score | PredictionSpace::LinearPredictor => eta,
            PredictionSpace::Label => threshold_label(link.mean(eta), LABEL_THRESHOLD),
            PredictionSpace::Probability | PredictionSpace::Mean => link.mean(eta),
        }
    }

    /// L2 evaluated at the prediction implied by a linear predictor.
    pub fn l2_at(self, eta: f64, link: Link) -> Result<f64> {
        self.l2(self.prediction(eta, link))
    }

    /// Loss evaluated at the prediction implied by a linear predictor.
    pub fn eval_at(self, y: f64, eta: f64, link: Link) -> Result<f64> {
        self.eval(y, self.prediction(eta, link))
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Loss::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss `{s}`")))
    }
}
