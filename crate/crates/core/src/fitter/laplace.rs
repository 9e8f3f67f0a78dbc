use nalgebra::{DMatrix, DVector};

use super::model::ConditionalModel;
use super::{FitError, FitOptions};
use crate::gmrf::{cholesky, gaussian_logdensity_factored, CholeskyFactor, SparsePrecision};
use crate::math::LN_2PI;

/// Gaussian approximation to `π(x | θ, y)` built from the mode and the
/// curvature at the mode.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub theta: f64,
    pub mode: Vec<f64>,
    pub precision: SparsePrecision,
    pub converged: bool,
    pub iterations: usize,
    factor: CholeskyFactor,
    prior: SparsePrecision,
    prior_factor: CholeskyFactor,
    log_likelihood: f64,
}

impl GaussianApprox {
    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// Laplace estimate of `log π(y | θ)`:
    /// `log π(y|x₀,θ) + log π(x₀|θ) − log π̃_G(x₀|θ,y)`.
    pub fn log_evidence(&self) -> f64 {
        let d = self.mode.len();
        let log_prior =
            -0.5 * d as f64 * LN_2PI + 0.5 * self.prior_factor.log_det() - 0.5 * self.prior.quadratic_form(&self.mode);
        let log_approx_at_mode = -0.5 * d as f64 * LN_2PI + 0.5 * self.factor.log_det();
        self.log_likelihood + log_prior - log_approx_at_mode
    }

    /// Same quantity assembled through the generic GMRF density routine.
    pub fn log_evidence_via_densities(&self) -> Result<f64, FitError> {
        let prior =
            gaussian_logdensity_factored(&self.prior, &self.prior_factor, &vec![0.0; self.mode.len()], &self.mode)?;
        let approx = gaussian_logdensity_factored(&self.precision, &self.factor, &self.mode, &self.mode)?;
        Ok(self.log_likelihood + prior - approx)
    }
}

fn gradient(
    prior: &SparsePrecision,
    rows: &[(usize, Vec<(usize, f64)>)],
    y: &[f64],
    prec: &[f64],
    x: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut g: Vec<f64> = prior.mul_vec(x).into_iter().map(|v| -v).collect();
    let mut eta = Vec::with_capacity(rows.len());
    for ((_, row), (yi, ti)) in rows.iter().zip(y.iter().zip(prec)) {
        let e: f64 = row.iter().map(|&(c, a)| a * x[c]).sum();
        let score = ti * (yi - e);
        for &(c, a) in row {
            g[c] += a * score;
        }
        eta.push(e);
    }
    (g, eta)
}

/// Newton iterations on the latent field at fixed `θ`.
pub fn gaussian_approximation(model: &ConditionalModel, theta: f64) -> Result<GaussianApprox, FitError> {
    gaussian_approximation_with(model, theta, &FitOptions::default())
}

pub fn gaussian_approximation_with(
    model: &ConditionalModel,
    theta: f64,
    opts: &FitOptions,
) -> Result<GaussianApprox, FitError> {
    if !theta.is_finite() {
        return Err(FitError::InvalidModel(format!("theta must be finite, got {theta}")));
    }
    let layout = model.layout();
    let d = layout.dim();
    let prior = model.prior_precision(theta)?;
    let prior_factor = cholesky(&prior)?;
    let rows = model.observation_rows();
    let observed: Vec<usize> = rows.iter().map(|(i, _)| *i).collect();
    let log_prec_all = model.observation_log_precision(theta);
    let y: Vec<f64> = observed.iter().map(|&i| model.response()[i].expect("observed")).collect();
    let prec: Vec<f64> = observed.iter().map(|&i| log_prec_all[i].exp()).collect();

    // Hessian of the negative log posterior; constant in x for Gaussian
    // likelihoods.
    let mut triplets: Vec<(usize, usize, f64)> = prior.entries().to_vec();
    for ((_, row), t) in rows.iter().zip(&prec) {
        for (a, &(ca, va)) in row.iter().enumerate() {
            for &(cb, vb) in &row[..=a] {
                triplets.push((ca.max(cb), ca.min(cb), t * va * vb));
            }
        }
    }
    let precision = SparsePrecision::from_triplets(d, triplets, 0.0)?;
    let factor = cholesky(&precision)?;
    let diag = precision.diagonal();

    let mut x = vec![0.0; d];
    let mut iterations = 0;
    let mut converged = false;
    let mut eta = Vec::new();
    while iterations < opts.max_newton_iters {
        let (g, _) = gradient(&prior, &rows, &y, &prec, &x);
        let step = factor.solve(&g);
        x.iter_mut().zip(&step).for_each(|(xi, s)| *xi += s);
        iterations += 1;
        let (g_new, eta_new) = gradient(&prior, &rows, &y, &prec, &x);
        eta = eta_new;
        let gmax = g_new.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < opts.newton_tol {
            converged = true;
            break;
        }
        // Remaining Newton step measured in conditional standard deviations.
        let next = factor.solve(&g_new);
        let scaled = next.iter().zip(&diag).fold(0.0f64, |m, (s, h)| m.max(s.abs() * h.sqrt()));
        if scaled < opts.newton_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FitError::NotConverged { theta, iterations });
    }
    let log_likelihood = model.log_likelihood(&observed, &eta, &log_prec_all);
    Ok(GaussianApprox { theta, mode: x, precision, converged, iterations, factor, prior, prior_factor, log_likelihood })
}

/// Closed-form `log π(y | θ)` for the linear-Gaussian model: the observed
/// responses are jointly `N(0, A Q⁻¹ Aᵀ + D⁻¹)`. Computed densely, without
/// the latent-space Laplace route.
pub fn exact_gaussian_evidence(model: &ConditionalModel, theta: f64) -> Result<f64, FitError> {
    if !theta.is_finite() {
        return Err(FitError::InvalidModel(format!("theta must be finite, got {theta}")));
    }
    let d = model.layout().dim();
    let prior = model.prior_precision(theta)?.to_dense();
    let cov = prior.cholesky().ok_or_else(|| FitError::Unsupported("latent prior is not proper".into()))?.inverse();
    let rows = model.observation_rows();
    let m = rows.len();
    if m == 0 {
        return Ok(0.0);
    }
    let mut a: DMatrix<f64> = DMatrix::zeros(m, d);
    for (r, (_, row)) in rows.iter().enumerate() {
        for &(c, v) in row {
            a[(r, c)] += v;
        }
    }
    let log_prec = model.observation_log_precision(theta);
    let mut s: DMatrix<f64> = &a * cov * a.transpose();
    for (r, (i, _)) in rows.iter().enumerate() {
        s[(r, r)] += (-log_prec[*i]).exp();
    }
    let y = DVector::from_iterator(m, rows.iter().map(|(i, _)| model.response()[*i].expect("observed")));
    let chol = s
        .cholesky()
        .ok_or_else(|| FitError::Unsupported("marginal covariance of y is not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let alpha = chol.solve(&y);
    Ok(-0.5 * m as f64 * LN_2PI - 0.5 * log_det - 0.5 * y.dot(&alpha))
}
