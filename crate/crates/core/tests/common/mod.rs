#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Exact posterior of the linear model `y = Xβ + ε`, `ε ~ N(0, 1/τ)`, with
/// independent `β_k ~ N(0, 1/p_k)` and `τ ~ Gamma(a, b)`, integrated over
/// `log τ` on a dense grid.
pub struct ConjugatePosterior {
    /// Normalized quadrature weights on the `log τ` grid.
    pub weights: Vec<f64>,
    pub log_tau: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl ConjugatePosterior {
    pub fn new(x: &DMatrix<f64>, y: &[f64], prior_precision: &[f64], a: f64, b: f64) -> Self {
        let n = y.len() as f64;
        let yv = DVector::from_column_slice(y);
        let xtx = x.transpose() * x;
        let xty = x.transpose() * &yv;
        let yty = yv.dot(&yv);
        let p0 = DMatrix::from_diagonal(&DVector::from_column_slice(prior_precision));
        let log_det_p0: f64 = prior_precision.iter().map(|v| v.ln()).sum();

        let lo = -8.0;
        let hi = 8.0;
        let m = 4001;
        let step = (hi - lo) / (m - 1) as f64;
        let mut log_post = Vec::with_capacity(m);
        let mut log_tau = Vec::with_capacity(m);
        let mut means = Vec::with_capacity(m);
        let mut covs = Vec::with_capacity(m);
        for i in 0..m {
            let t = lo + step * i as f64;
            let tau = t.exp();
            let prec = &p0 + &xtx * tau;
            let chol = prec.clone().cholesky().expect("spd");
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let bvec = &xty * tau;
            let mean = chol.solve(&bvec);
            // log π(y | τ) for the Gaussian-linear model.
            let ll =
                0.5 * n * (t - LN_2PI) + 0.5 * log_det_p0 - 0.5 * log_det - 0.5 * tau * yty + 0.5 * bvec.dot(&mean);
            // Gamma(a, b) density of τ on the log scale, with Jacobian.
            let lp = a * b.ln() - statrs::function::gamma::ln_gamma(a) + a * t - b * tau;
            log_post.push(ll + lp);
            log_tau.push(t);
            means.push(mean);
            covs.push(chol.inverse());
        }
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = log_post.iter().map(|v| (v - max).exp()).collect();
        assert!(raw[0] < 1e-12 && raw[m - 1] < 1e-12, "tau grid too narrow");
        let total: f64 = raw.iter().sum();
        Self { weights: raw.iter().map(|v| v / total).collect(), log_tau, means, covs }
    }

    pub fn mean(&self, k: usize) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m[k]).sum()
    }

    pub fn sd(&self, k: usize) -> f64 {
        let mu = self.mean(k);
        let second: f64 = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.covs))
            .map(|(w, (m, c))| w * (c[(k, k)] + m[k] * m[k]))
            .sum();
        (second - mu * mu).sqrt()
    }

    pub fn cdf(&self, k: usize, v: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.covs))
            .map(|(w, (m, c))| w * normal_cdf((v - m[k]) / c[(k, k)].sqrt()))
            .sum()
    }

    pub fn tau_mean(&self) -> f64 {
        self.weights.iter().zip(&self.log_tau).map(|(w, t)| w * t.exp()).sum()
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Kolmogorov distance between a weighted ECDF and a continuous CDF.
pub fn weighted_ks(z: &[f64], w: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let total: f64 = w.iter().sum();
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|a, b| z[*a].total_cmp(&z[*b]));
    let mut acc = 0.0;
    let mut worst = 0.0f64;
    for &i in &idx {
        let f = cdf(z[i]);
        worst = worst.max((acc - f).abs());
        acc += w[i] / total;
        worst = worst.max((acc - f).abs());
    }
    worst
}

/// Weighted mean and its Monte Carlo standard error (delta method for
/// self-normalized weights).
pub fn weighted_mean_se(z: &[f64], w: &[f64]) -> (f64, f64) {
    let total: f64 = w.iter().sum();
    let mean: f64 = z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    let var: f64 = z.iter().zip(w).map(|(a, b)| (b / total).powi(2) * (a - mean).powi(2)).sum();
    (mean, var.sqrt())
}

/// Design `[1, x1, x2]` and response of a bivariate dataset.
pub fn bivariate_design(data: &condlgm::data::Dataset) -> (DMatrix<f64>, Vec<f64>) {
    let y = data.complete_column("y").unwrap();
    let x1 = data.complete_column("x1").unwrap();
    let x2 = data.complete_column("x2").unwrap();
    let n = y.len();
    let x = DMatrix::from_fn(n, 3, |i, k| match k {
        0 => 1.0,
        1 => x1[i],
        _ => x2[i],
    });
    (x, y)
}

/// Posterior of the shipped bivariate model under its exact priors.
pub fn bivariate_oracle(data: &condlgm::data::Dataset) -> ConjugatePosterior {
    let (x, y) = bivariate_design(data);
    ConjugatePosterior::new(&x, &y, &[0.001, 1e-6, 1e-6], 1.0, 5e-5)
}
