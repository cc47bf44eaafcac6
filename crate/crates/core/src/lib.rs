//! Bias-corrected cross-validation for models trained on correlated data.

pub mod bias;
pub mod cv;
pub mod error;
pub mod glmm;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod roc;
pub mod sim;

pub use error::{Error, Result};
