//! Importance-sampling quality diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::samplers::{Method, WeightedSampleSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("effective sample size undefined: no positive weight")]
    Undefined,
    #[error("length mismatch: {0} weights, {1} values")]
    LengthMismatch(usize, usize),
    #[error("weights must be finite and nonnegative")]
    InvalidWeights,
}

fn check_weights(w: &[f64]) -> Result<(), DiagnosticsError> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(DiagnosticsError::InvalidWeights);
    }
    Ok(())
}

/// `(Σw)² / Σw²`.
pub fn ess(weights: &[f64]) -> Result<f64, DiagnosticsError> {
    check_weights(weights)?;
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(DiagnosticsError::Undefined);
    }
    // Scale by the max so the result does not depend on the weight scale.
    let (s1, s2) = weights.iter().fold((0.0, 0.0), |(a, b), w| {
        let v = w / max;
        (a + v, b + v * v)
    });
    Ok(s1 * s1 / s2)
}

/// Effective sample size for estimating `E[h]`: ESS of `|h_i| w_i`.
pub fn ne_h(weights: &[f64], h: &[f64]) -> Result<f64, DiagnosticsError> {
    if weights.len() != h.len() {
        return Err(DiagnosticsError::LengthMismatch(weights.len(), h.len()));
    }
    check_weights(weights)?;
    let tilde: Vec<f64> = weights.iter().zip(h).map(|(w, v)| w * v.abs()).collect();
    if tilde.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::InvalidWeights);
    }
    ess(&tilde)
}

/// Weighted ECDF of `z` against uniform ranks: `(Σ_{i≤l} w_(i), l/n)`.
pub fn probability_plot(z: &[f64], weights: &[f64]) -> Result<Vec<(f64, f64)>, DiagnosticsError> {
    if z.len() != weights.len() {
        return Err(DiagnosticsError::LengthMismatch(weights.len(), z.len()));
    }
    check_weights(weights)?;
    let n = z.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut out: Vec<(f64, f64)> = order
        .iter()
        .enumerate()
        .map(|(l, &i)| {
            acc += weights[i];
            ((acc / total).min(1.0), (l + 1) as f64 / n as f64)
        })
        .collect();
    if let Some(last) = out.last_mut() {
        last.0 = 1.0;
    }
    Ok(out)
}

/// Largest vertical distance of a probability plot from the identity line.
pub fn pplot_max_deviation(points: &[(f64, f64)]) -> f64 {
    points.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// ESS of every prefix of `weights`; prefixes with no positive weight give 0.
pub fn running_ess(weights: &[f64]) -> Vec<f64> {
    // Running sums relative to the running max keep the ratio exact under
    // rescaling and match `ess` on the full vector.
    let mut out = Vec::with_capacity(weights.len());
    let (mut s1, mut s2, mut max) = (0.0f64, 0.0f64, 0.0f64);
    for &w in weights {
        if w > max {
            let r = max / w;
            s1 *= r;
            s2 *= r * r;
            max = w;
        }
        if max > 0.0 {
            let v = w / max;
            s1 += v;
            s2 += v * v;
            out.push(s1 * s1 / s2);
        } else {
            out.push(0.0);
        }
    }
    if let (Some(last), Ok(full)) = (out.last_mut(), ess(weights)) {
        *last = full;
    }
    out
}

/// Integrated autocorrelation time by Geyer's initial positive sequence.
pub fn integrated_autocorrelation_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 3 {
        return 1.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 1.0;
    }
    let acf = |k: usize| -> f64 { (0..n - k).map(|i| (x[i] - mean) * (x[i + k] - mean)).sum::<f64>() / n as f64 / c0 };
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = acf(k) + acf(k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    tau.max(1.0)
}

/// Effective size of an MCMC chain: `n / τ_int`.
pub fn chain_ess(x: &[f64]) -> f64 {
    x.len() as f64 / integrated_autocorrelation_time(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub method: String,
    pub n_samples: usize,
    pub ess: f64,
    pub running_ess: Vec<f64>,
    /// Prefix length for each entry of `running_ess`.
    pub running_ess_at: Vec<usize>,
    pub ne_h: BTreeMap<String, f64>,
    pub pplot: BTreeMap<String, Vec<(f64, f64)>>,
    pub n_failed_fits: usize,
    pub n_out_of_support: usize,
    pub runtime_seconds: f64,
    pub schedule: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Running-ESS stride for chains, where each prefix needs an IAT estimate.
const CHAIN_RUNNING_POINTS: usize = 200;

/// Diagnostics for a sample set. For MH the ESS figures use the integrated
/// autocorrelation time of each component instead of the weight formula.
pub fn report(set: &WeightedSampleSet, runtime_seconds: f64) -> Result<DiagnosticsReport, DiagnosticsError> {
    let w = &set.weights;
    let mut ne = BTreeMap::new();
    let mut pplot = BTreeMap::new();
    let (ess_all, running, running_at) = if set.method == Method::Mh {
        let per: Vec<f64> = (0..set.param_names.len()).map(|k| chain_ess(&set.component(k))).collect();
        for (name, v) in set.param_names.iter().zip(&per) {
            ne.insert(name.clone(), *v);
        }
        let overall = per.iter().copied().fold(f64::INFINITY, f64::min);
        let n = set.len();
        let stride = n.div_ceil(CHAIN_RUNNING_POINTS).max(1);
        let comps: Vec<Vec<f64>> = (0..set.param_names.len()).map(|c| set.component(c)).collect();
        let mut running = Vec::new();
        let mut at = Vec::new();
        let mut k = stride;
        while k <= n {
            running.push(comps.iter().map(|c| chain_ess(&c[..k])).fold(f64::INFINITY, f64::min));
            at.push(k);
            k += stride;
        }
        if n % stride != 0 {
            running.push(overall);
            at.push(n);
        }
        (overall.min(n as f64), running, at)
    } else {
        for (k, name) in set.param_names.iter().enumerate() {
            ne.insert(name.clone(), ne_h(w, &set.component(k))?);
        }
        (ess(w)?, running_ess(w), (1..=w.len()).collect())
    };
    for (k, name) in set.param_names.iter().enumerate() {
        pplot.insert(name.clone(), probability_plot(&set.component(k), w)?);
    }
    Ok(DiagnosticsReport {
        method: set.method.as_str().into(),
        n_samples: set.len(),
        ess: ess_all,
        running_ess: running,
        running_ess_at: running_at,
        ne_h: ne,
        pplot,
        n_failed_fits: set.n_failed_fits,
        n_out_of_support: set.n_out_of_support,
        runtime_seconds,
        schedule: set.schedule.clone(),
        acceptance_rate: None,
        warnings: set.warnings.clone(),
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ess_examples() {
        assert_eq!(ess(&[1.0; 7]).unwrap(), 7.0);
        assert_eq!(ess(&[1.0, 1.0, 0.0, 0.0]).unwrap(), 2.0);
        assert!((ess(&[3.0, 1.0]).unwrap() - 1.6).abs() < 1e-15);
        assert_eq!(ess(&[0.0, 0.0]), Err(DiagnosticsError::Undefined));
    }

    #[test]
    fn ne_h_single_support() {
        assert_eq!(ne_h(&[0.2, 0.5, 0.3], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn pplot_examples() {
        let p = probability_plot(&[3.0, 1.0, 2.0, 0.0], &[0.25; 4]).unwrap();
        assert!(p.iter().all(|(a, b)| a == b));
        let p = probability_plot(&[0.0, 1.0, 2.0], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p[0].0, 1.0);
    }

    #[test]
    fn running_ess_examples() {
        assert_eq!(running_ess(&[1.0; 4]), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(running_ess(&[1.0, 0.0, 0.0]), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn iat_of_independent_draws_near_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let tau = integrated_autocorrelation_time(&x);
        assert!(tau < 1.3, "{tau}");
        // AR(1) with coefficient 0.9 has τ = 19.
        let mut y = vec![0.0; 20000];
        for i in 1..y.len() {
            y[i] = 0.9 * y[i - 1] + rng.random::<f64>() - 0.5;
        }
        let tau = integrated_autocorrelation_time(&y);
        assert!((tau - 19.0).abs() < 5.0, "{tau}");
    }
}
