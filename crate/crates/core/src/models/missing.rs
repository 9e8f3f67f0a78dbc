use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{log_normal_prior, require_rows, ModelAdapter, ModelError, ModelId, ModelSpec};
use crate::data::Dataset;
use crate::fitter::{ConditionalModel, FitError, FitOptions, FixedEffects, Likelihood};
use crate::samplers::{ProposalParams, TargetAdapter};

/// Linear regression of `y` on a covariate `x` with gaps; the missing `x`
/// values are the conditioning parameters.
#[derive(Debug, Clone)]
pub struct MissingCovariateAdapter {
    y: Vec<Option<f64>>,
    x: Vec<Option<f64>>,
    missing_rows: Vec<usize>,
    prior_mean: f64,
    prior_var: f64,
    fit: FitOptions,
    spec: ModelSpec,
}

impl MissingCovariateAdapter {
    pub fn new(data: &Dataset, fit: FitOptions) -> Result<Self, ModelError> {
        let y = data.column("y")?.to_vec();
        let x = data.column("x")?.to_vec();
        let missing_rows: Vec<usize> = x.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| i).collect();
        if missing_rows.is_empty() {
            return Err(ModelError::Invalid("column 'x' has no missing values; nothing to impute".into()));
        }
        let obs: Vec<f64> = x.iter().flatten().copied().collect();
        require_rows(obs.len(), 2)?;
        require_rows(y.iter().flatten().count(), 3)?;
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let sd = (obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (obs.len() - 1) as f64).sqrt();
        // Constant observed covariates still need a proper prior.
        let sd = sd.max(1e-6 * mean.abs().max(1.0));
        let prior_var = (2.0 * sd).powi(2);
        let m = missing_rows.len();
        let spec = ModelSpec {
            id: ModelId::Missing,
            columns: vec!["y".into(), "x".into()],
            param_names: missing_rows.iter().map(|r| format!("x_{}", r + 1)).collect(),
            latent_names: vec!["beta0".into(), "beta1".into(), "tau".into()],
            g0: ProposalParams::gaussian(vec![mean; m], DMatrix::identity(m, m) * prior_var)?,
            mh_step: DMatrix::identity(m, m) * (0.25 * prior_var / m as f64),
            z0: vec![mean; m],
        };
        Ok(Self { y, x, missing_rows, prior_mean: mean, prior_var, fit, spec })
    }

    /// Zero-based rows whose covariate is imputed, in parameter order.
    pub fn missing_rows(&self) -> &[usize] {
        &self.missing_rows
    }

    /// Mean and variance of the prior on each missing value.
    pub fn prior_moments(&self) -> (f64, f64) {
        (self.prior_mean, self.prior_var)
    }
}

impl TargetAdapter for MissingCovariateAdapter {
    fn param_names(&self) -> Vec<String> {
        self.spec.param_names.clone()
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        z.iter().map(|v| log_normal_prior(*v, self.prior_mean, self.prior_var)).sum()
    }

    fn conditional_model(&self, z: &[f64]) -> Result<ConditionalModel, FitError> {
        let n = self.y.len();
        let mut x: Vec<f64> = self.x.iter().map(|v| v.unwrap_or(0.0)).collect();
        for (r, v) in self.missing_rows.iter().zip(z) {
            x[*r] = *v;
        }
        let design = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { x[i] });
        let fixed = FixedEffects::new(vec!["beta0".into(), "beta1".into()], design);
        ConditionalModel::new(self.y.clone(), Likelihood::Gaussian, fixed)
    }

    fn fit_options(&self) -> FitOptions {
        self.fit.clone()
    }
}

impl ModelAdapter for MissingCovariateAdapter {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }
}

/// Hidden covariate values of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingTruth {
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
}

/// `x ~ N(0, 1)`, `y = 1 + x + N(0, 0.5²)`. About 36% of `x` is removed at
/// random (9 of 25 at the default size) and two responses among the
/// complete rows are dropped as well.
pub fn simulate_missing(seed: u64, n: usize) -> Result<(Dataset, MissingTruth), ModelError> {
    require_rows(n, 8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = Normal::new(0.0, 1.0).expect("valid sd");
    let ne = Normal::new(0.0, 0.5).expect("valid sd");
    let x: Vec<f64> = (0..n).map(|_| nx.sample(&mut rng)).collect();
    let y: Vec<f64> = x.iter().map(|v| 1.0 + v + ne.sample(&mut rng)).collect();
    let n_mis = ((n as f64) * 9.0 / 25.0).round().max(1.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut rows: Vec<usize> = order[..n_mis].to_vec();
    rows.sort_unstable();
    let y_gaps: Vec<usize> = order[n_mis..].iter().take(2).copied().collect();
    let values = rows.iter().map(|r| x[*r]).collect();
    let xcol = (0..n).map(|i| if rows.contains(&i) { None } else { Some(x[i]) }).collect();
    let ycol = (0..n).map(|i| if y_gaps.contains(&i) { None } else { Some(y[i]) }).collect();
    let data = Dataset::new(vec!["y".into(), "x".into()], vec![ycol, xcol])?;
    Ok((data, MissingTruth { rows, values }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_generator_shape() {
        let (d, t) = simulate_missing(3, 25).unwrap();
        assert_eq!(t.rows.len(), 9);
        assert_eq!(d.missing_mask("x").unwrap().iter().filter(|m| **m).count(), 9);
        assert_eq!(d.missing_mask("y").unwrap().iter().filter(|m| **m).count(), 2);
    }

    #[test]
    fn nothing_to_impute() {
        let d = Dataset::from_complete(&["y", "x"], vec![vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0]]).unwrap();
        assert!(MissingCovariateAdapter::new(&d, FitOptions::default()).is_err());
    }

    #[test]
    fn constant_covariate_centres_prior() {
        let d = Dataset::new(
            vec!["y".into(), "x".into()],
            vec![vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)], vec![Some(2.5), Some(2.5), None, Some(2.5)]],
        )
        .unwrap();
        let a = MissingCovariateAdapter::new(&d, FitOptions::default()).unwrap();
        assert_eq!(a.prior_moments().0, 2.5);
        assert_eq!(a.spec().g0.mu(), &[2.5]);
    }
}
