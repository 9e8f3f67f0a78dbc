use super::laplace::{gaussian_approximation_with, GaussianApprox};
use super::model::{ConditionalModel, HyperRole};
use super::{FitError, FitOptions};
use crate::math::log_sum_exp;

/// Spacing between grid nodes in posterior standard deviations of `θ`.
pub const NODE_SPACING_SD: f64 = 0.7;

const SCAN_LO: f64 = -15.0;
const SCAN_HI: f64 = 20.0;
const SCAN_STEP: f64 = 1.25;
const GOLDEN_TOL: f64 = 1e-5;
const CURVATURE_STEP: f64 = 0.05;

/// Integration nodes for the scalar hyperparameter `θ` (log precision).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGrid {
    pub nodes: Vec<f64>,
    /// `log Δ_g`.
    pub log_weights: Vec<f64>,
    /// Point mass: condition on `θ` instead of integrating over it, so the
    /// hyperprior and `Δ` are left out of the evidence.
    pub fixed: bool,
    pub degraded: bool,
    /// Location and scale of the `θ` posterior used to place the nodes.
    pub mode: f64,
    pub sd: f64,
}

impl ThetaGrid {
    pub fn fixed(theta: f64) -> Self {
        Self { nodes: vec![theta], log_weights: vec![0.0], fixed: true, degraded: false, mode: theta, sd: 0.0 }
    }

    pub fn new(nodes: Vec<f64>, log_weights: Vec<f64>) -> Result<Self, FitError> {
        if nodes.is_empty() || nodes.len() != log_weights.len() {
            return Err(FitError::InvalidGrid("nodes and weights must be nonempty and equal length".into()));
        }
        if nodes.iter().chain(&log_weights).any(|v| !v.is_finite()) {
            return Err(FitError::InvalidGrid("grid values must be finite".into()));
        }
        let mode = nodes[nodes.len() / 2];
        Ok(Self { nodes, log_weights, fixed: false, degraded: false, mode, sd: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Weights normalized to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.log_weights);
        self.log_weights.iter().map(|w| (w - lse).exp()).collect()
    }
}

/// Fit at a single grid node.
#[derive(Debug, Clone)]
pub(crate) struct NodeFit {
    pub index: usize,
    pub approx: GaussianApprox,
    /// Laplace `log π(y|θ_g)` plus hyperprior and `log Δ_g` (unless fixed).
    pub log_mass: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct GridFit {
    pub nodes: Vec<NodeFit>,
    pub log_evidence: f64,
    pub degraded: bool,
}

impl GridFit {
    pub fn node_weights(&self) -> Vec<f64> {
        let masses: Vec<f64> = self.nodes.iter().map(|n| n.log_mass).collect();
        let lse = log_sum_exp(&masses);
        masses.iter().map(|m| (m - lse).exp()).collect()
    }
}

pub(crate) fn fit_grid(model: &ConditionalModel, grid: &ThetaGrid, opts: &FitOptions) -> Result<GridFit, FitError> {
    let integrate = !grid.fixed && model.hyper_role() != HyperRole::None;
    let prior = model.hyper_prior();
    let mut nodes = Vec::with_capacity(grid.len());
    let mut last_err = None;
    for (index, (&theta, &log_w)) in grid.nodes.iter().zip(&grid.log_weights).enumerate() {
        match gaussian_approximation_with(model, theta, opts) {
            Ok(approx) => {
                let mut log_mass = approx.log_evidence();
                if integrate {
                    log_mass += prior.log_density_log_scale(theta) + log_w;
                } else {
                    log_mass += log_w;
                }
                if log_mass.is_finite() {
                    nodes.push(NodeFit { index, approx, log_mass });
                } else {
                    last_err = Some(FitError::NonFiniteEvidence { theta });
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    if nodes.is_empty() {
        return Err(FitError::AllNodesFailed(Box::new(last_err.unwrap_or(FitError::InvalidGrid("empty grid".into())))));
    }
    let degraded = grid.degraded || nodes.len() < grid.len();
    let masses: Vec<f64> = nodes.iter().map(|n| n.log_mass).collect();
    let log_evidence = if degraded && nodes.len() < grid.len() && integrate {
        // Renormalize the integration weights over the surviving nodes.
        let kept: Vec<f64> = nodes.iter().map(|n| grid.log_weights[n.index]).collect();
        log_sum_exp(&masses) - log_sum_exp(&kept) + log_sum_exp(&grid.log_weights)
    } else {
        log_sum_exp(&masses)
    };
    Ok(GridFit { nodes, log_evidence, degraded })
}

/// Laplace log marginal likelihood integrated over the `θ` grid.
pub fn conditional_log_evidence(model: &ConditionalModel, grid: &ThetaGrid) -> Result<f64, FitError> {
    Ok(fit_grid(model, grid, &FitOptions::default())?.log_evidence)
}

fn log_theta_posterior(model: &ConditionalModel, theta: f64, opts: &FitOptions) -> f64 {
    match gaussian_approximation_with(model, theta, opts) {
        Ok(a) => {
            let v = a.log_evidence() + model.hyper_prior().log_density_log_scale(theta);
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Locates the mode of `log π(θ | y)` and places `n_nodes` equally spaced
/// nodes `0.7` posterior standard deviations apart around it.
pub fn build_theta_grid(model: &ConditionalModel, n_nodes: usize) -> Result<ThetaGrid, FitError> {
    build_theta_grid_with(model, n_nodes, &FitOptions::default())
}

pub fn build_theta_grid_with(
    model: &ConditionalModel,
    n_nodes: usize,
    opts: &FitOptions,
) -> Result<ThetaGrid, FitError> {
    if n_nodes == 0 || n_nodes % 2 == 0 {
        return Err(FitError::InvalidGrid(format!("n_nodes must be odd and >= 1, got {n_nodes}")));
    }
    if model.hyper_role() == HyperRole::None {
        return Ok(ThetaGrid::fixed(0.0));
    }
    let f = |t: f64| log_theta_posterior(model, t, opts);
    match locate_mode(&f) {
        Some((mode, sd)) => Ok(place_nodes(mode, sd, n_nodes, false)),
        None => {
            let prior = model.hyper_prior();
            Ok(place_nodes(prior.mean_log(), prior.sd_log(), 1, true))
        }
    }
}

fn locate_mode(f: &impl Fn(f64) -> f64) -> Option<(f64, f64)> {
    let n_scan = ((SCAN_HI - SCAN_LO) / SCAN_STEP).round() as usize + 1;
    let scan: Vec<(f64, f64)> = (0..n_scan)
        .map(|i| {
            let t = SCAN_LO + SCAN_STEP * i as f64;
            (t, f(t))
        })
        .collect();
    let (best, _) = scan
        .iter()
        .enumerate()
        .filter(|(_, (_, v))| v.is_finite())
        .fold((None, f64::NEG_INFINITY), |(bi, bv), (i, (_, v))| if *v > bv { (Some(i), *v) } else { (bi, bv) });
    let best = best?;
    if best == 0 || best == n_scan - 1 {
        return None;
    }
    let mode = golden_section_max(f, scan[best - 1].0, scan[best + 1].0, GOLDEN_TOL);
    let h = CURVATURE_STEP;
    let (fm, fp, f0) = (f(mode - h), f(mode + h), f(mode));
    let curvature = (fp - 2.0 * f0 + fm) / (h * h);
    if !(curvature < 0.0 && curvature.is_finite()) {
        return None;
    }
    Some((mode, (-1.0 / curvature).sqrt()))
}

fn place_nodes(mode: f64, sd: f64, n_nodes: usize, degraded: bool) -> ThetaGrid {
    let half = (n_nodes / 2) as f64;
    let (nodes, log_w): (Vec<f64>, Vec<f64>) = if n_nodes == 1 {
        // Single node: Gaussian rule, Δ = sqrt(2π)·sd.
        (vec![mode], vec![((2.0 * std::f64::consts::PI).sqrt() * sd).ln()])
    } else {
        let step = NODE_SPACING_SD * sd;
        ((0..n_nodes).map(|k| mode + (k as f64 - half) * step).collect(), vec![step.ln(); n_nodes])
    };
    ThetaGrid { nodes, log_weights: log_w, fixed: false, degraded, mode, sd }
}
