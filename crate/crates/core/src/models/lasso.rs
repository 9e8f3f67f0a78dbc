use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{require_rows, ModelAdapter, ModelError, ModelId, ModelSpec};
use crate::data::Dataset;
use crate::fitter::{ConditionalModel, FitError, FitOptions, FixedEffects, Likelihood};
use crate::samplers::{ProposalParams, TargetAdapter};

/// Coefficients used by [`simulate_lasso`].
pub const LASSO_TRUE_BETA: [f64; 5] = [1.5, -1.0, 0.0, 0.0, 0.5];

/// Linear regression with independent Laplace priors on every slope,
/// conditioning on the slopes.
#[derive(Debug, Clone)]
pub struct LassoAdapter {
    y: Vec<Option<f64>>,
    x: DMatrix<f64>,
    lambda: f64,
    fit: FitOptions,
    spec: ModelSpec,
}

impl LassoAdapter {
    pub fn new(data: &Dataset, lambda: f64, fit: FitOptions) -> Result<Self, ModelError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ModelError::Invalid(format!("lambda must be positive, got {lambda}")));
        }
        let y = data.column("y")?.to_vec();
        let covs: Vec<String> = data.names().iter().filter(|n| *n != "y").cloned().collect();
        if covs.is_empty() {
            return Err(ModelError::Invalid("lasso needs at least one covariate column besides y".into()));
        }
        require_rows(y.iter().flatten().count(), covs.len() + 2)?;
        let n = y.len();
        let p = covs.len();
        let mut x = DMatrix::zeros(n, p);
        for (k, name) in covs.iter().enumerate() {
            for (i, v) in data.complete_column(name)?.into_iter().enumerate() {
                x[(i, k)] = v;
            }
        }
        let xtx = x.transpose() * &x;
        let inv = xtx.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
            ModelError::Invalid("XᵀX is singular; drop collinear columns or add a small ridge jitter".into())
        })?;
        let step =
            (xtx * 4.0).cholesky().map(|c| c.inverse()).ok_or_else(|| ModelError::Invalid("XᵀX is singular".into()))?;
        let spec = ModelSpec {
            id: ModelId::Lasso,
            columns: std::iter::once("y".to_string()).chain(covs.iter().cloned()).collect(),
            param_names: covs.iter().map(|c| format!("beta_{c}")).collect(),
            latent_names: vec!["beta0".into(), "tau".into()],
            g0: ProposalParams::student_t(3.0, vec![0.0; p], inv)?,
            mh_step: step,
            z0: vec![0.0; p],
        };
        Ok(Self { y, x, lambda, fit, spec })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `XᵀX` of the covariate block.
    pub fn gram(&self) -> DMatrix<f64> {
        self.x.transpose() * &self.x
    }
}

impl TargetAdapter for LassoAdapter {
    fn param_names(&self) -> Vec<String> {
        self.spec.param_names.clone()
    }

    /// Independent Laplace(0, 1/λ): `Σ log(λ/2) − λ|β_k|`.
    fn log_prior(&self, z: &[f64]) -> f64 {
        z.iter().map(|b| (self.lambda / 2.0).ln() - self.lambda * b.abs()).sum()
    }

    fn conditional_model(&self, z: &[f64]) -> Result<ConditionalModel, FitError> {
        let response = self
            .y
            .iter()
            .enumerate()
            .map(|(i, y)| y.map(|v| v - (0..z.len()).map(|k| self.x[(i, k)] * z[k]).sum::<f64>()))
            .collect();
        let fixed = FixedEffects { names: vec!["beta0".into()], ..FixedEffects::intercept(self.y.len()) };
        ConditionalModel::new(response, Likelihood::Gaussian, fixed)
    }

    fn fit_options(&self) -> FitOptions {
        self.fit.clone()
    }
}

impl ModelAdapter for LassoAdapter {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }
}

/// Five standardized Gaussian covariates, coefficients [`LASSO_TRUE_BETA`],
/// intercept 1 and unit noise.
pub fn simulate_lasso(seed: u64, n: usize) -> Result<Dataset, ModelError> {
    require_rows(n, 8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = move || -> f64 { StandardNormal.sample(&mut rng) };
    let p = LASSO_TRUE_BETA.len();
    let mut cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| draw()).collect()).collect();
    for c in &mut cols {
        let m = c.iter().sum::<f64>() / n as f64;
        let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        c.iter_mut().for_each(|v| *v = (*v - m) / sd);
    }
    let y: Vec<f64> =
        (0..n).map(|i| 1.0 + (0..p).map(|k| LASSO_TRUE_BETA[k] * cols[k][i]).sum::<f64>() + draw()).collect();
    let names: Vec<String> = std::iter::once("y".to_string()).chain((1..=p).map(|k| format!("x{k}"))).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    Ok(Dataset::from_complete(&name_refs, std::iter::once(y).chain(cols).collect())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_at_zero() {
        let d = simulate_lasso(2, 40).unwrap();
        let a = LassoAdapter::new(&d, 3.0, FitOptions::default()).unwrap();
        assert!((a.log_prior(&[0.0; 5]) - 5.0 * 1.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn rejects_collinear_design() {
        let d = Dataset::from_complete(
            &["y", "a", "b"],
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 8.0]],
        )
        .unwrap();
        assert!(LassoAdapter::new(&d, 1.0, FitOptions::default()).is_err());
    }
}
