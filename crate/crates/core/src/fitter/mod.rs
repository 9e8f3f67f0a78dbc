//! Laplace-approximation fitter for conditional latent Gaussian models.
//!
//! Given a [`ConditionalModel`] (the conditioning parameters already plugged
//! in) the fitter returns the log marginal likelihood of the data and the
//! posterior marginals of the remaining parameters, integrating the scalar
//! hyperparameter over a [`ThetaGrid`].

mod grid;
mod laplace;
mod model;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::gmrf::{constrained_moments, GmrfError, LinearConstraint};
use crate::math::{linspace, std_normal_pdf, trapezoid};

pub use grid::{build_theta_grid, build_theta_grid_with, conditional_log_evidence, ThetaGrid, NODE_SPACING_SD};
pub use laplace::{exact_gaussian_evidence, gaussian_approximation, gaussian_approximation_with, GaussianApprox};
pub use model::{ConditionalModel, FixedEffects, GammaPrior, HyperRole, Likelihood, Rw2Term, VAGUE_FIXED_PRECISION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unsupported model: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Gmrf(#[from] GmrfError),
    #[error("newton iterations did not converge at theta={theta} after {iterations} steps")]
    NotConverged { theta: f64, iterations: usize },
    #[error("non-finite evidence at theta={theta}")]
    NonFiniteEvidence { theta: f64 },
    #[error("every grid node failed; last error: {0}")]
    AllNodesFailed(Box<FitError>),
    #[error("invalid theta grid: {0}")]
    InvalidGrid(String),
    #[error("invalid marginal grid: {0}")]
    InvalidMarginal(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub theta_nodes: usize,
    pub marginal_points: usize,
    /// Half-width of marginal grids in posterior standard deviations.
    pub marginal_span_sd: f64,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { theta_nodes: 9, marginal_points: 75, marginal_span_sd: 5.0, newton_tol: 1e-8, max_newton_iters: 30 }
    }
}

/// Tabulated univariate density.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalGrid {
    abscissae: Vec<f64>,
    densities: Vec<f64>,
}

impl MarginalGrid {
    pub fn new(abscissae: Vec<f64>, densities: Vec<f64>) -> Result<Self, FitError> {
        if abscissae.len() < 2 || abscissae.len() != densities.len() {
            return Err(FitError::InvalidMarginal("need at least two points of equal length".into()));
        }
        if abscissae.windows(2).any(|w| !(w[1] > w[0])) || abscissae.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidMarginal("abscissae must be finite and strictly increasing".into()));
        }
        if densities.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(FitError::InvalidMarginal("densities must be finite and nonnegative".into()));
        }
        Ok(Self { abscissae, densities })
    }

    /// Rescales so the trapezoid integral is one.
    pub fn normalized(mut self) -> Result<Self, FitError> {
        let total = self.integral();
        if !(total > 0.0 && total.is_finite()) {
            return Err(FitError::InvalidMarginal(format!("cannot normalize, integral {total}")));
        }
        self.densities.iter_mut().for_each(|d| *d /= total);
        Ok(self)
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.abscissae
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.abscissae, &self.densities)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.abscissae[0], self.abscissae[self.abscissae.len() - 1])
    }

    /// Linear interpolation, zero outside the tabulated range.
    pub fn interpolate(&self, x: f64) -> f64 {
        let (lo, hi) = self.range();
        if !(x >= lo && x <= hi) {
            return 0.0;
        }
        let k = self.abscissae.partition_point(|a| *a <= x);
        if k == 0 {
            return self.densities[0];
        }
        if k >= self.abscissae.len() {
            return self.densities[self.densities.len() - 1];
        }
        let (x0, x1) = (self.abscissae[k - 1], self.abscissae[k]);
        let t = (x - x0) / (x1 - x0);
        self.densities[k - 1] * (1.0 - t) + self.densities[k] * t
    }

    /// Mean under the piecewise-linear density.
    pub fn mean(&self) -> f64 {
        let xy: Vec<f64> = self.abscissae.iter().zip(&self.densities).map(|(x, d)| x * d).collect();
        trapezoid(&self.abscissae, &xy) / self.integral()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let xy: Vec<f64> = self.abscissae.iter().zip(&self.densities).map(|(x, d)| (x - m).powi(2) * d).collect();
        trapezoid(&self.abscissae, &xy) / self.integral()
    }
}

/// Posterior moments of the smooth predictor `reference·β + f` per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Output of one conditional fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub log_evidence: f64,
    /// Marginals of the fixed effects, keyed by name.
    pub marginals: BTreeMap<String, MarginalGrid>,
    /// Marginal of the hyperparameter on the precision scale, keyed by
    /// [`ConditionalModel::hyper_name`]; absent for fixed grids.
    pub hyper_marginal: Option<(String, MarginalGrid)>,
    pub smooth: Option<SmoothSummary>,
    pub grid: ThetaGrid,
    pub degraded: bool,
}

impl FitResult {
    /// Marginal for `name`, looking at fixed effects then the hyperparameter.
    pub fn marginal(&self, name: &str) -> Option<&MarginalGrid> {
        self.marginals.get(name).or_else(|| self.hyper_marginal.as_ref().filter(|(n, _)| n == name).map(|(_, g)| g))
    }

    /// A result that carries only an evidence value.
    pub fn evidence_only(log_evidence: f64) -> Self {
        Self {
            log_evidence,
            marginals: BTreeMap::new(),
            hyper_marginal: None,
            smooth: None,
            grid: ThetaGrid::fixed(0.0),
            degraded: false,
        }
    }
}

struct NodeMoments {
    mean: Vec<f64>,
    cov: nalgebra::DMatrix<f64>,
}

/// Conditional marginals of the latent field and the hyperparameter,
/// mixing the per-node Gaussian approximations with the grid posterior.
pub fn latent_marginals(model: &ConditionalModel, grid: &ThetaGrid) -> Result<FitResult, FitError> {
    latent_marginals_with(model, grid, &FitOptions::default())
}

pub fn latent_marginals_with(
    model: &ConditionalModel,
    grid: &ThetaGrid,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let fit = grid::fit_grid(model, grid, opts)?;
    let weights = fit.node_weights();
    let layout = model.layout();
    let d = layout.dim();
    let constraint = if layout.smooth.is_empty() {
        LinearConstraint::none(d)
    } else {
        LinearConstraint::sum_to_zero(d, layout.smooth.clone())
    };

    let moments: Vec<NodeMoments> = fit
        .nodes
        .iter()
        .map(|node| {
            let factor = node.approx.factor();
            let b = node.approx.precision.mul_vec(&node.approx.mode);
            let (mean, cov) = constrained_moments(factor, &b, &constraint)?;
            Ok(NodeMoments { mean, cov })
        })
        .collect::<Result<_, FitError>>()?;

    let mut marginals = BTreeMap::new();
    for (k, name) in model.fixed().names.iter().enumerate() {
        let idx = layout.fixed.start + k;
        let comps: Vec<(f64, f64, f64)> =
            moments.iter().zip(&weights).map(|(m, w)| (*w, m.mean[idx], m.cov[(idx, idx)].max(0.0).sqrt())).collect();
        marginals.insert(name.clone(), gaussian_mixture_grid(&comps, opts)?);
    }

    let hyper_marginal = if grid.fixed || model.hyper_role() == HyperRole::None {
        None
    } else {
        Some((model.hyper_name().to_string(), hyper_grid(&fit, grid, opts)?))
    };

    let smooth = model.smooth().map(|term| {
        let reference: Vec<f64> =
            if term.reference_row.is_empty() { vec![0.0; layout.fixed.len()] } else { term.reference_row.clone() };
        let mut mean = Vec::with_capacity(term.n_bins);
        let mut sd = Vec::with_capacity(term.n_bins);
        for bin in 0..term.n_bins {
            let mut coef = vec![(layout.smooth.start + bin, 1.0)];
            coef.extend(
                reference.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(k, c)| (layout.fixed.start + k, *c)),
            );
            let (mut m1, mut m2) = (0.0, 0.0);
            for (m, w) in moments.iter().zip(&weights) {
                let mu: f64 = coef.iter().map(|(i, c)| c * m.mean[*i]).sum();
                let var: f64 =
                    coef.iter().flat_map(|(i, ci)| coef.iter().map(move |(j, cj)| ci * cj * m.cov[(*i, *j)])).sum();
                m1 += w * mu;
                m2 += w * (var.max(0.0) + mu * mu);
            }
            mean.push(m1);
            sd.push((m2 - m1 * m1).max(0.0).sqrt());
        }
        SmoothSummary { mean, sd }
    });

    Ok(FitResult {
        log_evidence: fit.log_evidence,
        marginals,
        hyper_marginal,
        smooth,
        grid: grid.clone(),
        degraded: fit.degraded,
    })
}

/// Tabulates `Σ w N(x | m, s²)` over `[min(m − k·s), max(m + k·s)]`.
fn gaussian_mixture_grid(comps: &[(f64, f64, f64)], opts: &FitOptions) -> Result<MarginalGrid, FitError> {
    let span = opts.marginal_span_sd;
    let lo = comps.iter().map(|(_, m, s)| m - span * s).fold(f64::INFINITY, f64::min);
    let hi = comps.iter().map(|(_, m, s)| m + span * s).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(FitError::InvalidMarginal("degenerate posterior variance".into()));
    }
    let xs = linspace(lo, hi, opts.marginal_points);
    let ds: Vec<f64> = xs
        .iter()
        .map(|x| comps.iter().filter(|(_, _, s)| *s > 0.0).map(|(w, m, s)| w * std_normal_pdf((x - m) / s) / s).sum())
        .collect();
    MarginalGrid::new(xs, ds)?.normalized()
}

/// Hyperparameter marginal on the precision scale `τ = exp(θ)`.
fn hyper_grid(fit: &grid::GridFit, grid: &ThetaGrid, opts: &FitOptions) -> Result<MarginalGrid, FitError> {
    let n = opts.marginal_points;
    let (thetas, log_dens): (Vec<f64>, Vec<f64>) = if fit.nodes.len() == 1 {
        let sd = if grid.sd > 0.0 { grid.sd } else { 1.0 };
        let m = fit.nodes[0].approx.theta;
        let xs = linspace(m - 3.5 * sd, m + 3.5 * sd, n);
        let ld = xs.iter().map(|t| -0.5 * ((t - m) / sd).powi(2)).collect();
        (xs, ld)
    } else {
        // Piecewise-linear interpolation of the log posterior between nodes.
        let node_t: Vec<f64> = fit.nodes.iter().map(|nd| nd.approx.theta).collect();
        let node_l: Vec<f64> = fit.nodes.iter().map(|nd| nd.log_mass - grid.log_weights[nd.index]).collect();
        let xs = linspace(node_t[0], node_t[node_t.len() - 1], n);
        let ld = xs
            .iter()
            .map(|t| {
                let k = node_t.partition_point(|v| v <= t).clamp(1, node_t.len() - 1);
                let (t0, t1) = (node_t[k - 1], node_t[k]);
                let a = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                node_l[k - 1] * (1.0 - a) + node_l[k] * a
            })
            .collect();
        (xs, ld)
    };
    let max = log_dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let taus: Vec<f64> = thetas.iter().map(|t| t.exp()).collect();
    let dens: Vec<f64> = thetas.iter().zip(&log_dens).map(|(t, l)| (l - max - t).exp()).collect();
    MarginalGrid::new(taus, dens)?.normalized()
}

/// Builds the default grid and returns the full conditional fit.
pub fn fit_conditional(model: &ConditionalModel, opts: &FitOptions) -> Result<FitResult, FitError> {
    let grid = build_theta_grid_with(model, opts.theta_nodes, opts)?;
    latent_marginals_with(model, &grid, opts)
}
