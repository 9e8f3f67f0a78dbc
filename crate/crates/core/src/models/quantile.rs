use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{complete_columns, log_normal_prior, require_rows, ModelAdapter, ModelError, ModelId, ModelSpec};
use crate::data::Dataset;
use crate::fitter::{ConditionalModel, FitError, FitOptions, FixedEffects, Likelihood, Rw2Term};
use crate::samplers::{ProposalParams, TargetAdapter};

/// Variance of the vague priors on `α` and `β`.
pub const COEF_PRIOR_VAR: f64 = 1000.0;

/// Log-precision intercept and slope of the generator.
pub const LIDAR_ALPHA: f64 = 4.0;
pub const LIDAR_BETA: f64 = -3.0;

/// Heteroscedastic smooth regression: `y_i ~ N(μ0 + f(x_i), exp(−(α + βx_i)))`
/// with an RW2 prior on `f`, conditioning on `(α, β)`.
#[derive(Debug, Clone)]
pub struct QuantileAdapter {
    x: Vec<f64>,
    y: Vec<Option<f64>>,
    bin: Vec<usize>,
    n_bins: usize,
    lo: f64,
    width: f64,
    fit: FitOptions,
    spec: ModelSpec,
}

impl QuantileAdapter {
    pub fn new(data: &Dataset, n_bins: usize, fit: FitOptions) -> Result<Self, ModelError> {
        let x = complete_columns(data, &["x"])?.remove(0);
        let y = data.column("y")?.to_vec();
        require_rows(y.iter().flatten().count(), 3)?;
        if n_bins < 3 {
            return Err(ModelError::Invalid(format!("model.bins must be at least 3, got {n_bins}")));
        }
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(ModelError::Invalid("covariate x is constant; need at least 3 distinct bins".into()));
        }
        let width = (hi - lo) / n_bins as f64;
        let bin: Vec<usize> = x.iter().map(|v| (((v - lo) / width) as usize).min(n_bins - 1)).collect();
        let mut used = bin.clone();
        used.sort_unstable();
        used.dedup();
        if used.len() < 3 {
            return Err(ModelError::Invalid(format!("x falls in only {} distinct bins; need at least 3", used.len())));
        }
        let spec = ModelSpec {
            id: ModelId::Quantile,
            columns: vec!["x".into(), "y".into()],
            param_names: vec!["alpha".into(), "beta".into()],
            latent_names: vec!["mu0".into(), "tau_f".into()],
            g0: ProposalParams::student_t(3.0, vec![0.0, 0.0], DMatrix::identity(2, 2) * 10.0)?,
            mh_step: DMatrix::identity(2, 2) * 0.3f64.powi(2),
            z0: vec![0.0, 0.0],
        };
        Ok(Self { x, y, bin, n_bins, lo, width, fit, spec })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }
}

impl TargetAdapter for QuantileAdapter {
    fn param_names(&self) -> Vec<String> {
        self.spec.param_names.clone()
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        z.iter().map(|v| log_normal_prior(*v, 0.0, COEF_PRIOR_VAR)).sum()
    }

    fn conditional_model(&self, z: &[f64]) -> Result<ConditionalModel, FitError> {
        let log_precision = self.x.iter().map(|x| z[0] + z[1] * x).collect();
        let fixed = FixedEffects { names: vec!["mu0".into()], ..FixedEffects::intercept(self.x.len()) };
        let mut term = Rw2Term::new("f", self.bin.clone(), self.n_bins);
        term.reference_row = vec![1.0];
        ConditionalModel::new(self.y.clone(), Likelihood::Heteroscedastic { log_precision }, fixed)?.with_smooth(term)
    }

    fn fit_options(&self) -> FitOptions {
        self.fit.clone()
    }
}

impl ModelAdapter for QuantileAdapter {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Bin midpoints.
    fn smooth_abscissae(&self) -> Option<Vec<f64>> {
        Some((0..self.n_bins).map(|k| self.lo + (k as f64 + 0.5) * self.width).collect())
    }
}

/// Sigmoid drop mean of the generator.
pub fn lidar_mean(x: f64) -> f64 {
    -0.05 - 0.65 / (1.0 + (-(x - 0.55) * 14.0).exp())
}

/// Noise sd of the generator, `exp(−½(α + βx))`.
pub fn lidar_sd(x: f64) -> f64 {
    (-0.5 * (LIDAR_ALPHA + LIDAR_BETA * x)).exp()
}

/// Sorted `x ~ U(0, 1)`, sigmoid mean, noise sd growing with `x`.
pub fn simulate_quantile(seed: u64, n: usize) -> Result<Dataset, ModelError> {
    require_rows(n, 6)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(0.0, 1.0).expect("valid range");
    let mut x: Vec<f64> = (0..n).map(|_| u.sample(&mut rng)).collect();
    x.sort_by(f64::total_cmp);
    let y: Vec<f64> = x
        .iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            lidar_mean(*v) + lidar_sd(*v) * e
        })
        .collect();
    Ok(Dataset::from_complete(&["x", "y"], vec![x, y])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitter::HyperRole;

    #[test]
    fn zero_coefficients_give_unit_variance() {
        let d = simulate_quantile(1, 60).unwrap();
        let a = QuantileAdapter::new(&d, 10, FitOptions::default()).unwrap();
        let m = a.conditional_model(&[0.0, 0.0]).unwrap();
        assert_eq!(m.likelihood(), &Likelihood::Heteroscedastic { log_precision: vec![0.0; 60] });
        assert_eq!(m.hyper_role(), HyperRole::SmoothPrecision);
        assert_eq!(m.hyper_name(), "tau_f");
    }

    #[test]
    fn too_few_bins() {
        let d = Dataset::from_complete(&["x", "y"], vec![vec![0.0, 0.0, 1.0, 1.0], vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert!(QuantileAdapter::new(&d, 10, FitOptions::default()).is_err());
    }
}
