use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::SamplerError;
use crate::math::LN_2PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Gaussian,
    StudentT { nu: f64 },
}

/// Location, scale and family of a sampling distribution over `z_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalParams {
    family: Family,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    log_det: f64,
}

impl ProposalParams {
    pub fn new(family: Family, mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self, SamplerError> {
        let d = mu.len();
        if d == 0 {
            return Err(SamplerError::InvalidProposal("empty location vector".into()));
        }
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(SamplerError::InvalidProposal(format!(
                "scale matrix is {}x{}, expected {d}x{d}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if let Family::StudentT { nu } = family {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(SamplerError::InvalidProposal(format!("nu must be positive, got {nu}")));
            }
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(SamplerError::InvalidProposal("non-finite proposal parameters".into()));
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let chol = sym
            .clone()
            .cholesky()
            .ok_or_else(|| SamplerError::InvalidProposal("scale matrix is not positive definite".into()))?;
        let chol_l = chol.l();
        let log_det = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { family, mu: DVector::from_vec(mu), sigma: sym, chol_l, log_det })
    }

    pub fn gaussian(mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self, SamplerError> {
        Self::new(Family::Gaussian, mu, sigma)
    }

    pub fn student_t(nu: f64, mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self, SamplerError> {
        Self::new(Family::StudentT { nu }, mu, sigma)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        self.mu.as_slice()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Covariance of the distribution; `None` for a t with `ν ≤ 2`.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        match self.family {
            Family::Gaussian => Some(self.sigma.clone()),
            Family::StudentT { nu } if nu > 2.0 => Some(&self.sigma * (nu / (nu - 2.0))),
            Family::StudentT { .. } => None,
        }
    }

    /// Same family and ν, new location and scale.
    pub fn with_moments(&self, mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self, SamplerError> {
        Self::new(self.family, mu, sigma)
    }
}

/// One draw; Student-t as a Gaussian scale mixture.
pub fn sample_proposal<R: Rng + ?Sized>(p: &ProposalParams, rng: &mut R) -> Vec<f64> {
    let d = p.dim();
    let eps = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let mut z = &p.chol_l * eps;
    if let Family::StudentT { nu } = p.family {
        let chi2: f64 = ChiSquared::new(nu).expect("nu validated").sample(rng);
        z /= (chi2 / nu).sqrt();
    }
    (z + &p.mu).iter().copied().collect()
}

pub fn log_proposal_density(p: &ProposalParams, z: &[f64]) -> f64 {
    let d = p.dim();
    assert_eq!(z.len(), d, "dimension mismatch");
    let diff = DVector::from_iterator(d, z.iter().zip(p.mu.iter()).map(|(a, b)| a - b));
    let y = p.chol_l.solve_lower_triangular(&diff).expect("nonsingular factor");
    let q = y.norm_squared();
    let df = d as f64;
    match p.family {
        Family::Gaussian => -0.5 * df * LN_2PI - 0.5 * p.log_det - 0.5 * q,
        Family::StudentT { nu } => {
            ln_gamma(0.5 * (nu + df))
                - ln_gamma(0.5 * nu)
                - 0.5 * df * (nu * std::f64::consts::PI).ln()
                - 0.5 * p.log_det
                - 0.5 * (nu + df) * (q / nu).ln_1p()
        }
    }
}

/// Relative eigenvalue floor for adapted scale matrices.
pub const EIGEN_FLOOR: f64 = 1e-8;

/// Weighted mean and covariance of `points`, repaired to SPD.
///
/// `weights` need not be normalized; zero or non-finite entries are skipped.
pub fn weighted_moments(points: &[Vec<f64>], weights: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>), SamplerError> {
    let d = points.first().map(|p| p.len()).ok_or(SamplerError::AdaptationFailure("no samples".into()))?;
    let total: f64 = weights.iter().filter(|w| w.is_finite() && **w > 0.0).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(SamplerError::AdaptationFailure("all weights are zero".into()));
    }
    let mut mu = vec![0.0; d];
    for (z, w) in points.iter().zip(weights) {
        if w.is_finite() && *w > 0.0 {
            let wn = w / total;
            mu.iter_mut().zip(z).for_each(|(m, v)| *m += wn * v);
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for (z, w) in points.iter().zip(weights) {
        if w.is_finite() && *w > 0.0 {
            let wn = w / total;
            for i in 0..d {
                for j in 0..=i {
                    cov[(i, j)] += wn * (z[i] - mu[i]) * (z[j] - mu[j]);
                }
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    Ok((mu, repair_spd(cov)))
}

fn repair_spd(cov: DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let trace = cov.trace();
    let floor = if trace > 0.0 { EIGEN_FLOOR * trace / d as f64 } else { EIGEN_FLOOR };
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.iter().all(|v| *v >= floor) && cov.clone().cholesky().is_some() {
        return cov;
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

/// Moment-matched update of `template` from weighted draws.
pub fn adapt_moments(
    template: &ProposalParams,
    points: &[Vec<f64>],
    weights: &[f64],
) -> Result<ProposalParams, SamplerError> {
    let (mu, cov) = weighted_moments(points, weights)?;
    template.with_moments(mu, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::rng::substream;

    #[test]
    fn standard_gaussian_density_at_origin() {
        let p = ProposalParams::gaussian(vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        assert!((log_proposal_density(&p, &[0.0, 0.0]) + LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn t_mode_lower_than_gaussian_mode() {
        let g = ProposalParams::gaussian(vec![0.0], DMatrix::identity(1, 1)).unwrap();
        let t = ProposalParams::student_t(3.0, vec![0.0], DMatrix::identity(1, 1)).unwrap();
        assert!(log_proposal_density(&t, &[0.0]) < log_proposal_density(&g, &[0.0]));
    }

    #[test]
    fn draws_are_reproducible() {
        let p = ProposalParams::gaussian(vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let a = sample_proposal(&p, &mut substream(3, 0, 5));
        let b = sample_proposal(&p, &mut substream(3, 0, 5));
        assert_eq!(a, b);
    }

    #[test]
    fn two_point_moments() {
        let (mu, cov) = weighted_moments(&[vec![0.0], vec![2.0]], &[1.0, 1.0]).unwrap();
        assert_eq!(mu, vec![1.0]);
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_support_is_floored() {
        let (mu, cov) = weighted_moments(&[vec![0.0], vec![7.0]], &[1.0, 0.0]).unwrap();
        assert_eq!(mu, vec![0.0]);
        assert_eq!(cov[(0, 0)], EIGEN_FLOOR);
    }

    #[test]
    fn zero_weights_fail() {
        assert!(matches!(
            weighted_moments(&[vec![0.0], vec![1.0]], &[0.0, 0.0]),
            Err(SamplerError::AdaptationFailure(_))
        ));
    }

    #[test]
    fn rejects_non_spd_scale() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(ProposalParams::gaussian(vec![0.0, 0.0], s).is_err());
    }
}
