use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{complete_columns, log_normal_prior, require_rows, ModelAdapter, ModelError, ModelId, ModelSpec};
use crate::data::Dataset;
use crate::fitter::{ConditionalModel, FitError, FitOptions, FixedEffects, Likelihood};
use crate::samplers::{ProposalParams, TargetAdapter};

/// Prior precision of the (nearly flat) priors on `β1, β2`.
pub const FLAT_PRECISION: f64 = 1e-6;

/// `y = β0 + β1 x1 + β2 x2 + ε`, conditioning on `(β1, β2)`.
#[derive(Debug, Clone)]
pub struct BivariateAdapter {
    y: Vec<Option<f64>>,
    x1: Vec<f64>,
    x2: Vec<f64>,
    fit: FitOptions,
    spec: ModelSpec,
}

impl BivariateAdapter {
    pub fn new(data: &Dataset, fit: FitOptions) -> Result<Self, ModelError> {
        let y = data.column("y")?.to_vec();
        let cols = complete_columns(data, &["x1", "x2"])?;
        require_rows(y.iter().flatten().count(), 3)?;
        let spec = ModelSpec {
            id: ModelId::Bivariate,
            columns: vec!["y".into(), "x1".into(), "x2".into()],
            param_names: vec!["beta1".into(), "beta2".into()],
            latent_names: vec!["beta0".into(), "tau".into()],
            g0: ProposalParams::gaussian(vec![0.0, 0.0], DMatrix::identity(2, 2) * 5.0)?,
            mh_step: DMatrix::identity(2, 2) * 0.75f64.powi(2),
            z0: vec![0.0, 0.0],
        };
        let mut it = cols.into_iter();
        Ok(Self { y, x1: it.next().unwrap(), x2: it.next().unwrap(), fit, spec })
    }
}

impl TargetAdapter for BivariateAdapter {
    fn param_names(&self) -> Vec<String> {
        self.spec.param_names.clone()
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        z.iter().map(|v| log_normal_prior(*v, 0.0, 1.0 / FLAT_PRECISION)).sum()
    }

    fn conditional_model(&self, z: &[f64]) -> Result<ConditionalModel, FitError> {
        let response = self
            .y
            .iter()
            .zip(self.x1.iter().zip(&self.x2))
            .map(|(y, (a, b))| y.map(|v| v - z[0] * a - z[1] * b))
            .collect();
        let fixed = FixedEffects::intercept(self.y.len());
        let fixed = FixedEffects { names: vec!["beta0".into()], ..fixed };
        ConditionalModel::new(response, Likelihood::Gaussian, fixed)
    }

    fn fit_options(&self) -> FitOptions {
        self.fit.clone()
    }
}

impl ModelAdapter for BivariateAdapter {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }
}

/// Covariates `U(0, 1)`, `β = (1, 1, −1)`, unit noise precision.
pub fn simulate_bivariate(seed: u64, n: usize) -> Result<Dataset, ModelError> {
    require_rows(n, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(0.0, 1.0).expect("valid range");
    let e = Normal::new(0.0, 1.0).expect("valid sd");
    let mut cols = vec![Vec::with_capacity(n); 3];
    for _ in 0..n {
        let x1 = u.sample(&mut rng);
        let x2 = u.sample(&mut rng);
        let y = 1.0 + x1 - x2 + e.sample(&mut rng);
        cols[0].push(y);
        cols[1].push(x1);
        cols[2].push(x2);
    }
    Ok(Dataset::from_complete(&["y", "x1", "x2"], cols)?)
}
