use nalgebra::DMatrix;

use super::FitError;
use crate::gmrf::{build_rw2_precision, SparsePrecision};
use crate::math::LN_2PI;

/// Default prior precision for fixed effects.
pub const VAGUE_FIXED_PRECISION: f64 = 0.001;

/// Gamma(shape, rate) prior on a precision, evaluated on the log scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: 1.0, rate: 0.00005 }
    }
}

impl GammaPrior {
    /// Log density of `θ = log τ` (includes the Jacobian `τ`).
    pub fn log_density_log_scale(&self, theta: f64) -> f64 {
        let a = self.shape;
        let b = self.rate;
        a * b.ln() - statrs::function::gamma::ln_gamma(a) + a * theta - b * theta.exp()
    }

    /// `E[log τ]`.
    pub fn mean_log(&self) -> f64 {
        statrs::function::gamma::digamma(self.shape) - self.rate.ln()
    }

    /// `sd[log τ]`.
    pub fn sd_log(&self) -> f64 {
        trigamma(self.shape).sqrt()
    }
}

fn trigamma(x: f64) -> f64 {
    // Recurrence up to x >= 10 then the asymptotic series.
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0 + (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0))) / (x * x * x)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Likelihood {
    /// Common precision `τ = exp(θ)` with a Gamma prior.
    Gaussian,
    /// Per-observation log precision fixed by the caller.
    Heteroscedastic { log_precision: Vec<f64> },
}

/// Fixed effects `Zβ`, including the intercept column when present.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffects {
    pub names: Vec<String>,
    pub design: DMatrix<f64>,
    pub prior_precision: Vec<f64>,
}

impl FixedEffects {
    pub fn new(names: Vec<String>, design: DMatrix<f64>) -> Self {
        let p = names.len();
        Self { names, design, prior_precision: vec![VAGUE_FIXED_PRECISION; p] }
    }

    pub fn intercept(n: usize) -> Self {
        Self::new(vec!["intercept".into()], DMatrix::from_element(n, 1, 1.0))
    }

    pub fn with_prior_precision(mut self, precision: Vec<f64>) -> Self {
        self.prior_precision = precision;
        self
    }
}

/// Second-order random-walk smooth over binned covariate values.
#[derive(Debug, Clone, PartialEq)]
pub struct Rw2Term {
    pub name: String,
    /// Bin index of each observation.
    pub bin: Vec<usize>,
    pub n_bins: usize,
    /// Fixed log precision; `None` makes it the model hyperparameter.
    pub log_precision: Option<f64>,
    /// Fixed-effect coefficients added to `f` when summarizing the
    /// predictor curve, e.g. `[1.0]` to report `intercept + f`.
    pub reference_row: Vec<f64>,
}

impl Rw2Term {
    pub fn new(name: impl Into<String>, bin: Vec<usize>, n_bins: usize) -> Self {
        Self { name: name.into(), bin, n_bins, log_precision: None, reference_row: Vec::new() }
    }
}

/// What the scalar hyperparameter `θ` controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperRole {
    ObservationPrecision,
    SmoothPrecision,
    None,
}

/// A latent Gaussian model with the conditioning parameters already fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalModel {
    likelihood: Likelihood,
    response: Vec<Option<f64>>,
    fixed: FixedEffects,
    smooth: Option<Rw2Term>,
    iid_log_precision: Option<f64>,
    hyper_prior: GammaPrior,
    hyper_name: String,
}

impl ConditionalModel {
    pub fn new(response: Vec<Option<f64>>, likelihood: Likelihood, fixed: FixedEffects) -> Result<Self, FitError> {
        let n = response.len();
        if n == 0 {
            return Err(FitError::InvalidModel("response is empty".into()));
        }
        if fixed.design.nrows() != n {
            return Err(FitError::InvalidModel(format!(
                "design has {} rows but response has {n}",
                fixed.design.nrows()
            )));
        }
        if fixed.names.len() != fixed.design.ncols() || fixed.prior_precision.len() != fixed.design.ncols() {
            return Err(FitError::InvalidModel("fixed-effect names, columns and priors disagree".into()));
        }
        if fixed.prior_precision.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(FitError::InvalidModel("fixed-effect prior precisions must be positive".into()));
        }
        if fixed.design.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidModel("design matrix has non-finite entries".into()));
        }
        if response.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidModel("observed response values must be finite".into()));
        }
        if let Likelihood::Heteroscedastic { log_precision } = &likelihood {
            if log_precision.len() != n {
                return Err(FitError::InvalidModel(format!(
                    "log-precision vector has length {} but response has {n}",
                    log_precision.len()
                )));
            }
            if log_precision.iter().any(|v| !v.is_finite()) {
                return Err(FitError::InvalidModel("log precisions must be finite".into()));
            }
        }
        Ok(Self {
            likelihood,
            response,
            fixed,
            smooth: None,
            iid_log_precision: None,
            hyper_prior: GammaPrior::default(),
            hyper_name: "tau".into(),
        })
    }

    pub fn with_smooth(mut self, term: Rw2Term) -> Result<Self, FitError> {
        if term.bin.len() != self.n() {
            return Err(FitError::InvalidModel("smooth index length differs from response".into()));
        }
        if term.n_bins < 3 {
            return Err(FitError::InvalidModel(format!("rw2 needs at least 3 bins, got {}", term.n_bins)));
        }
        if term.bin.iter().any(|&b| b >= term.n_bins) {
            return Err(FitError::InvalidModel("smooth bin index out of range".into()));
        }
        if !term.reference_row.is_empty() && term.reference_row.len() != self.fixed.names.len() {
            return Err(FitError::InvalidModel("reference row length differs from fixed effects".into()));
        }
        if term.log_precision.is_none() && self.likelihood == Likelihood::Gaussian {
            return Err(FitError::Unsupported(
                "free smooth precision together with a free observation precision".into(),
            ));
        }
        if term.log_precision.is_none() {
            self.hyper_name = format!("tau_{}", term.name);
        }
        self.smooth = Some(term);
        Ok(self)
    }

    /// Adds an independent Gaussian term per observation to the predictor.
    pub fn with_iid(mut self, log_precision: f64) -> Self {
        self.iid_log_precision = Some(log_precision);
        self
    }

    pub fn with_hyper_prior(mut self, prior: GammaPrior) -> Self {
        self.hyper_prior = prior;
        self
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn response(&self) -> &[Option<f64>] {
        &self.response
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }

    pub fn fixed(&self) -> &FixedEffects {
        &self.fixed
    }

    pub fn smooth(&self) -> Option<&Rw2Term> {
        self.smooth.as_ref()
    }

    pub fn hyper_prior(&self) -> GammaPrior {
        self.hyper_prior
    }

    pub fn hyper_name(&self) -> &str {
        &self.hyper_name
    }

    pub fn hyper_role(&self) -> HyperRole {
        match (&self.likelihood, &self.smooth) {
            (Likelihood::Gaussian, _) => HyperRole::ObservationPrecision,
            (Likelihood::Heteroscedastic { .. }, Some(t)) if t.log_precision.is_none() => HyperRole::SmoothPrecision,
            _ => HyperRole::None,
        }
    }

    pub(crate) fn layout(&self) -> LatentLayout {
        let m = self.smooth.as_ref().map_or(0, |s| s.n_bins);
        let iid = if self.iid_log_precision.is_some() { self.n() } else { 0 };
        let p = self.fixed.names.len();
        LatentLayout { smooth: 0..m, iid: m..m + iid, fixed: m + iid..m + iid + p }
    }

    /// Sparse rows of the observation matrix for observed responses, in
    /// observation order: `(observation index, [(latent column, coefficient)])`.
    pub(crate) fn observation_rows(&self) -> Vec<(usize, Vec<(usize, f64)>)> {
        let layout = self.layout();
        self.response
            .iter()
            .enumerate()
            .filter(|(_, y)| y.is_some())
            .map(|(i, _)| {
                let mut row = Vec::new();
                if let Some(s) = &self.smooth {
                    row.push((layout.smooth.start + s.bin[i], 1.0));
                }
                if !layout.iid.is_empty() {
                    row.push((layout.iid.start + i, 1.0));
                }
                for (k, col) in layout.fixed.clone().enumerate() {
                    let z = self.fixed.design[(i, k)];
                    if z != 0.0 {
                        row.push((col, z));
                    }
                }
                (i, row)
            })
            .collect()
    }

    /// Observation precisions for every observation at `theta`.
    pub(crate) fn observation_log_precision(&self, theta: f64) -> Vec<f64> {
        match &self.likelihood {
            Likelihood::Gaussian => vec![theta; self.n()],
            Likelihood::Heteroscedastic { log_precision } => log_precision.clone(),
        }
    }

    /// Latent prior precision at `theta` with any intrinsic jitter already
    /// folded into the diagonal.
    pub(crate) fn prior_precision(&self, theta: f64) -> Result<SparsePrecision, FitError> {
        let layout = self.layout();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        if let Some(s) = &self.smooth {
            let log_tau = match self.hyper_role() {
                HyperRole::SmoothPrecision => theta,
                _ => s.log_precision.unwrap_or(0.0),
            };
            let rw2 = build_rw2_precision(s.n_bins, log_tau.exp())?.with_jitter_applied();
            triplets.extend(rw2.entries().iter().copied());
        }
        if let Some(lp) = self.iid_log_precision {
            triplets.extend(layout.iid.clone().map(|i| (i, i, lp.exp())));
        }
        triplets.extend(layout.fixed.clone().zip(&self.fixed.prior_precision).map(|(i, &p)| (i, i, p)));
        Ok(SparsePrecision::from_triplets(layout.dim(), triplets, 0.0)?)
    }

    /// Log likelihood of the observed responses given the predictor values
    /// `eta` (one per observed row, as in [`Self::observation_rows`]).
    pub(crate) fn log_likelihood(&self, observed: &[usize], eta: &[f64], log_prec: &[f64]) -> f64 {
        observed
            .iter()
            .zip(eta)
            .map(|(&i, e)| {
                let y = self.response[i].expect("observed row");
                let r = y - e;
                -0.5 * LN_2PI + 0.5 * log_prec[i] - 0.5 * log_prec[i].exp() * r * r
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LatentLayout {
    pub smooth: std::ops::Range<usize>,
    pub iid: std::ops::Range<usize>,
    pub fixed: std::ops::Range<usize>,
}

impl LatentLayout {
    pub fn dim(&self) -> usize {
        self.fixed.end
    }
}
