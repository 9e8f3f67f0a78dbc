//! Posterior assembly from weighted conditional fits.

use thiserror::Error;

use crate::diagnostics::ess;
use crate::fitter::MarginalGrid;
use crate::math::{linspace, std_normal_pdf, std_normal_quantile, trapezoid};
use crate::samplers::WeightedSampleSet;

pub const MIX_POINTS: usize = 200;
pub const KDE_POINTS_1D: usize = 512;
pub const KDE_POINTS_2D: usize = 128;
/// Grid half-width beyond the data in bandwidths.
pub const KDE_PAD: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarginalError {
    #[error("sample ({iteration}, {index}) has no marginal for '{param}'")]
    MissingMarginal { param: String, iteration: usize, index: usize },
    #[error("no sample carries positive weight")]
    NoWeight,
    #[error(
        "degenerate support: all weight sits on one point, the posterior is delta-like; pass an explicit bandwidth"
    )]
    DegenerateSupport,
    #[error("length mismatch: {0} values, {1} weights")]
    LengthMismatch(usize, usize),
    #[error("invalid bandwidth {0}")]
    InvalidBandwidth(f64),
    #[error("probability must lie in (0, 1), got {0}")]
    InvalidProbability(f64),
}

/// Mixture of per-sample conditional marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedMarginal {
    pub param: String,
    pub abscissae: Vec<f64>,
    pub densities: Vec<f64>,
}

impl MixedMarginal {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.abscissae, &self.densities)
    }

    pub fn mean(&self) -> f64 {
        let xy: Vec<f64> = self.abscissae.iter().zip(&self.densities).map(|(x, d)| x * d).collect();
        trapezoid(&self.abscissae, &xy) / self.integral()
    }
}

/// `Σ_j w_j π̃(x | z_j, y)` on a common grid spanning every input range.
pub fn mix_marginals(set: &WeightedSampleSet, param: &str) -> Result<MixedMarginal, MarginalError> {
    let mut parts: Vec<(f64, &MarginalGrid)> = Vec::new();
    for (s, &w) in set.samples.iter().zip(&set.weights) {
        if w <= 0.0 {
            continue;
        }
        let grid = s.fit.as_ref().and_then(|f| f.marginal(param)).ok_or_else(|| MarginalError::MissingMarginal {
            param: param.to_string(),
            iteration: s.iteration,
            index: s.index,
        })?;
        parts.push((w, grid));
    }
    mix_grids(param, &parts)
}

/// Weighted mixture of tabulated densities.
pub fn mix_grids(param: &str, parts: &[(f64, &MarginalGrid)]) -> Result<MixedMarginal, MarginalError> {
    let total: f64 = parts.iter().map(|(w, _)| w).sum();
    if parts.is_empty() || !(total > 0.0) {
        return Err(MarginalError::NoWeight);
    }
    let lo = parts.iter().map(|(_, g)| g.range().0).fold(f64::INFINITY, f64::min);
    let hi = parts.iter().map(|(_, g)| g.range().1).fold(f64::NEG_INFINITY, f64::max);
    let xs = linspace(lo, hi, MIX_POINTS);
    let mut ds: Vec<f64> = xs.iter().map(|x| parts.iter().map(|(w, g)| w / total * g.interpolate(*x)).sum()).collect();
    let area = trapezoid(&xs, &ds);
    if area > 0.0 {
        ds.iter_mut().for_each(|d| *d /= area);
    }
    Ok(MixedMarginal { param: param.to_string(), abscissae: xs, densities: ds })
}

/// Weighted KDE output; 2-D densities are row-major with `x` varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedKdeEstimate {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub densities: Vec<f64>,
    pub bandwidth: (f64, Option<f64>),
}

impl WeightedKdeEstimate {
    pub fn density_at(&self, i: usize, j: usize) -> f64 {
        let ny = self.y.as_ref().map_or(1, |y| y.len());
        self.densities[i * ny + j]
    }

    /// Trapezoid integral (1-D) or product-trapezoid sum (2-D).
    pub fn integral(&self) -> f64 {
        match &self.y {
            None => trapezoid(&self.x, &self.densities),
            Some(y) => {
                let rows: Vec<f64> =
                    (0..self.x.len()).map(|i| trapezoid(y, &self.densities[i * y.len()..(i + 1) * y.len()])).collect();
                trapezoid(&self.x, &rows)
            }
        }
    }

    /// Grid point with the largest density.
    pub fn mode(&self) -> (f64, Option<f64>) {
        let k = self.densities.iter().enumerate().fold(0, |b, (i, d)| if *d > self.densities[b] { i } else { b });
        match &self.y {
            None => (self.x[k], None),
            Some(y) => (self.x[k / y.len()], Some(y[k % y.len()])),
        }
    }
}

fn normalized(w: &[f64]) -> Result<Vec<f64>, MarginalError> {
    let total: f64 = w.iter().filter(|v| v.is_finite() && **v > 0.0).sum();
    if !(total > 0.0) {
        return Err(MarginalError::NoWeight);
    }
    Ok(w.iter().map(|v| if v.is_finite() && *v > 0.0 { v / total } else { 0.0 }).collect())
}

/// Weighted Silverman rule `1.06 σ̂_w ESS^{-1/5}`.
pub fn silverman_bandwidth(z: &[f64], w: &[f64]) -> Result<f64, MarginalError> {
    if z.len() != w.len() {
        return Err(MarginalError::LengthMismatch(z.len(), w.len()));
    }
    let w = normalized(w)?;
    let mean: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
    let var: f64 = z.iter().zip(&w).map(|(a, b)| b * (a - mean).powi(2)).sum();
    let n_eff = ess(&w).map_err(|_| MarginalError::NoWeight)?;
    let h = 1.06 * var.sqrt() * n_eff.powf(-0.2);
    if !(h > 0.0 && h.is_finite()) {
        return Err(MarginalError::DegenerateSupport);
    }
    Ok(h)
}

struct Kde1d {
    z: Vec<f64>,
    w: Vec<f64>,
    h: f64,
}

impl Kde1d {
    fn new(z: &[f64], w: &[f64], bandwidth: Option<f64>) -> Result<Self, MarginalError> {
        if z.len() != w.len() {
            return Err(MarginalError::LengthMismatch(z.len(), w.len()));
        }
        let h = match bandwidth {
            Some(h) if h > 0.0 && h.is_finite() => h,
            Some(h) => return Err(MarginalError::InvalidBandwidth(h)),
            None => silverman_bandwidth(z, w)?,
        };
        let wn = normalized(w)?;
        let (z, w): (Vec<f64>, Vec<f64>) = z.iter().zip(&wn).filter(|(_, w)| **w > 0.0).map(|(a, b)| (*a, *b)).unzip();
        Ok(Self { z, w, h })
    }

    fn grid(&self, n: usize) -> Vec<f64> {
        let lo = self.z.iter().copied().fold(f64::INFINITY, f64::min) - KDE_PAD * self.h;
        let hi = self.z.iter().copied().fold(f64::NEG_INFINITY, f64::max) + KDE_PAD * self.h;
        linspace(lo, hi, n)
    }

    fn eval(&self, x: f64) -> f64 {
        self.z.iter().zip(&self.w).map(|(z, w)| w * std_normal_pdf((x - z) / self.h)).sum::<f64>() / self.h
    }
}

/// Weighted Gaussian-kernel density at the points `at`, bandwidth `h`.
pub fn kde_density_1d(z: &[f64], w: &[f64], h: f64, at: &[f64]) -> Result<Vec<f64>, MarginalError> {
    let k = Kde1d::new(z, w, Some(h))?;
    Ok(at.iter().map(|v| k.eval(*v)).collect())
}

/// Gaussian-kernel weighted KDE on 512 points over the data range ± 3h.
pub fn weighted_kde_1d(z: &[f64], w: &[f64], bandwidth: Option<f64>) -> Result<WeightedKdeEstimate, MarginalError> {
    let k = Kde1d::new(z, w, bandwidth)?;
    let x = k.grid(KDE_POINTS_1D);
    let densities = x.iter().map(|v| k.eval(*v)).collect();
    Ok(WeightedKdeEstimate { x, y: None, densities, bandwidth: (k.h, None) })
}

/// Product-kernel weighted KDE on a 128×128 grid with per-axis bandwidths.
pub fn weighted_kde_2d(
    z: &[(f64, f64)],
    w: &[f64],
    bandwidth: Option<(f64, f64)>,
) -> Result<WeightedKdeEstimate, MarginalError> {
    if z.len() != w.len() {
        return Err(MarginalError::LengthMismatch(z.len(), w.len()));
    }
    let a: Vec<f64> = z.iter().map(|p| p.0).collect();
    let b: Vec<f64> = z.iter().map(|p| p.1).collect();
    let ka = Kde1d::new(&a, w, bandwidth.map(|p| p.0))?;
    let kb = Kde1d::new(&b, w, bandwidth.map(|p| p.1))?;
    let x = ka.grid(KDE_POINTS_2D);
    let y = kb.grid(KDE_POINTS_2D);
    let wn = normalized(w)?;
    let pts: Vec<(f64, f64, f64)> =
        a.iter().zip(&b).zip(&wn).filter(|(_, w)| **w > 0.0).map(|((p, q), w)| (*p, *q, *w)).collect();
    // Kernel values per axis, reused across the grid.
    let kx: Vec<Vec<f64>> =
        x.iter().map(|xv| pts.iter().map(|p| std_normal_pdf((xv - p.0) / ka.h) / ka.h).collect()).collect();
    let ky: Vec<Vec<f64>> =
        y.iter().map(|yv| pts.iter().map(|p| std_normal_pdf((yv - p.1) / kb.h) / kb.h).collect()).collect();
    let mut densities = Vec::with_capacity(x.len() * y.len());
    for row in &kx {
        for col in &ky {
            densities.push(pts.iter().zip(row).zip(col).map(|((p, u), v)| p.2 * u * v).sum());
        }
    }
    Ok(WeightedKdeEstimate { x, y: Some(y), densities, bandwidth: (ka.h, Some(kb.h)) })
}

/// How the heteroscedastic scale is read from `(α, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleConvention {
    /// `log σ(x) = −½(α + βx)`: the per-observation log precision is `α + βx`.
    #[default]
    LogPrecision,
    /// `σ(x) = sqrt(exp(−½(α + βx)))`.
    LiteralSqrt,
}

pub fn scale_at(alpha: f64, beta: f64, x: f64, convention: ScaleConvention) -> f64 {
    let s = (-0.5 * (alpha + beta * x)).exp();
    match convention {
        ScaleConvention::LogPrecision => s,
        ScaleConvention::LiteralSqrt => s.sqrt(),
    }
}

/// `y_p(x) = μ0 + f(x) + σ(x) Φ⁻¹(p)` at each point of `x`.
pub fn quantile_curve(
    x: &[f64],
    mu0: f64,
    f: &[f64],
    alpha: f64,
    beta: f64,
    p: f64,
    convention: ScaleConvention,
) -> Result<Vec<f64>, MarginalError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MarginalError::InvalidProbability(p));
    }
    if x.len() != f.len() {
        return Err(MarginalError::LengthMismatch(x.len(), f.len()));
    }
    let zp = if p == 0.5 { 0.0 } else { std_normal_quantile(p) };
    Ok(x.iter().zip(f).map(|(xi, fi)| mu0 + fi + scale_at(alpha, beta, *xi, convention) * zp).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_curve_is_mean_curve() {
        let x = [0.0, 0.5, 1.0];
        let f = [0.1, -0.2, 0.3];
        let y = quantile_curve(&x, 2.0, &f, 0.7, -1.3, 0.5, ScaleConvention::LogPrecision).unwrap();
        assert_eq!(y, vec![2.1, 1.8, 2.3]);
    }

    #[test]
    fn unit_scale_at_zero_coefficients() {
        let y = quantile_curve(&[0.3], 0.0, &[0.0], 0.0, 0.0, 0.975, ScaleConvention::LogPrecision).unwrap();
        assert!((y[0] - std_normal_quantile(0.975)).abs() < 1e-15);
        assert!(quantile_curve(&[0.3], 0.0, &[0.0], 0.0, 0.0, 1.0, ScaleConvention::LogPrecision).is_err());
    }

    #[test]
    fn single_point_kde_is_one_kernel() {
        let k = weighted_kde_1d(&[1.0, 4.0], &[1.0, 0.0], Some(0.5)).unwrap();
        for (x, d) in k.x.iter().zip(&k.densities) {
            assert!((d - std_normal_pdf((x - 1.0) / 0.5) / 0.5).abs() < 1e-15);
        }
        assert_eq!(weighted_kde_1d(&[1.0, 4.0], &[1.0, 0.0], None), Err(MarginalError::DegenerateSupport));
    }
}
