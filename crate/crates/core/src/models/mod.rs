//! Shipped conditional models and their synthetic data generators.

mod bivariate;
mod lasso;
mod missing;
mod quantile;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::fitter::FitOptions;
use crate::samplers::{ProposalParams, SamplerError, TargetAdapter};

pub use bivariate::{simulate_bivariate, BivariateAdapter};
pub use lasso::{simulate_lasso, LassoAdapter, LASSO_TRUE_BETA};
pub use missing::{simulate_missing, MissingCovariateAdapter, MissingTruth};
pub use quantile::{lidar_mean, lidar_sd, simulate_quantile, QuantileAdapter, LIDAR_ALPHA, LIDAR_BETA};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model '{0}' (expected bivariate, lasso, missing or quantile)")]
    UnknownModel(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Proposal(#[from] SamplerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelId {
    Bivariate,
    Lasso,
    Missing,
    Quantile,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Bivariate, ModelId::Lasso, ModelId::Missing, ModelId::Quantile];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::Bivariate => "bivariate",
            ModelId::Lasso => "lasso",
            ModelId::Missing => "missing",
            ModelId::Quantile => "quantile",
        }
    }
}

impl std::str::FromStr for ModelId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelId::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| ModelError::UnknownModel(s.to_string()))
    }
}

/// Static description of a model bound to a dataset.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub id: ModelId,
    pub columns: Vec<String>,
    pub param_names: Vec<String>,
    /// Names of the fixed effects and hyperparameter of the conditional model.
    pub latent_names: Vec<String>,
    pub g0: ProposalParams,
    pub mh_step: DMatrix<f64>,
    pub z0: Vec<f64>,
}

/// Per-run model settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    pub lambda: f64,
    pub bins: usize,
    pub fit: FitOptions,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { lambda: 1.0, bins: 50, fit: FitOptions::default() }
    }
}

/// A shipped model: a target plus its defaults.
pub trait ModelAdapter: TargetAdapter + Send {
    fn spec(&self) -> &ModelSpec;

    /// Abscissae of the smooth term, when the model has one.
    fn smooth_abscissae(&self) -> Option<Vec<f64>> {
        None
    }
}

pub fn build_adapter(id: ModelId, data: &Dataset, opts: &ModelOptions) -> Result<Box<dyn ModelAdapter>, ModelError> {
    Ok(match id {
        ModelId::Bivariate => Box::new(BivariateAdapter::new(data, opts.fit.clone())?),
        ModelId::Lasso => Box::new(LassoAdapter::new(data, opts.lambda, opts.fit.clone())?),
        ModelId::Missing => Box::new(MissingCovariateAdapter::new(data, opts.fit.clone())?),
        ModelId::Quantile => Box::new(QuantileAdapter::new(data, opts.bins, opts.fit.clone())?),
    })
}

/// Default sample size of each generator.
pub fn default_n(id: ModelId) -> usize {
    match id {
        ModelId::Bivariate => 100,
        ModelId::Lasso => 100,
        ModelId::Missing => 25,
        ModelId::Quantile => 221,
    }
}

pub fn simulate_dataset(id: ModelId, seed: u64, n: usize) -> Result<Dataset, ModelError> {
    match id {
        ModelId::Bivariate => simulate_bivariate(seed, n),
        ModelId::Lasso => simulate_lasso(seed, n),
        ModelId::Missing => simulate_missing(seed, n).map(|(d, _)| d),
        ModelId::Quantile => simulate_quantile(seed, n),
    }
}

/// `log N(v | mean, var)`.
pub(crate) fn log_normal_prior(v: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (crate::math::LN_2PI + var.ln()) - 0.5 * (v - mean).powi(2) / var
}

pub(crate) fn complete_columns(data: &Dataset, names: &[&str]) -> Result<Vec<Vec<f64>>, ModelError> {
    names.iter().map(|n| data.complete_column(n).map_err(ModelError::from)).collect()
}

pub(crate) fn require_rows(n: usize, min: usize) -> Result<(), ModelError> {
    if n < min {
        return Err(ModelError::Invalid(format!("need at least {min} rows, got {n}")));
    }
    Ok(())
}
