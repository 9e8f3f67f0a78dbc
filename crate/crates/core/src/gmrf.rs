//! Sparse Gaussian Markov random field primitives.
//!
//! Precision matrices are stored as coalesced lower-triangle triplets and
//! factorized with an envelope (profile) Cholesky. All shipped latent
//! models are banded or arrow-shaped with the dense rows placed last, so the
//! natural ordering produces no fill outside the envelope.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::math::LN_2PI;

/// Diagonal jitter used for intrinsic (rank-deficient) precision matrices.
pub const DEFAULT_JITTER: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmrfError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("entry ({row}, {col}) outside a {dim}x{dim} matrix")]
    IndexOutOfRange { row: usize, col: usize, dim: usize },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("diagonal entry {index} is not strictly positive after jitter")]
    NonPositiveDiagonal { index: usize },
    #[error("cholesky factorization failed: non-positive pivot at index {pivot}")]
    FactorizationFailure { pivot: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
}

pub type Result<T> = std::result::Result<T, GmrfError>;

/// Symmetric sparse precision matrix, lower triangle only.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePrecision {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
    jitter: f64,
}

impl SparsePrecision {
    /// Builds a precision from `(row, col, value)` contributions. Entries
    /// above the diagonal are mirrored into the lower triangle and duplicate
    /// positions are summed, so each off-diagonal pair must be supplied once.
    pub fn from_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
        jitter: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(GmrfError::InvalidDimension("dim must be at least 1".into()));
        }
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(GmrfError::InvalidDimension(format!("jitter {jitter} must be >= 0")));
        }
        let mut raw: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(GmrfError::IndexOutOfRange { row: r, col: c, dim });
            }
            if !v.is_finite() {
                return Err(GmrfError::NonFinite { row: r, col: c });
            }
            raw.push((r.max(c), r.min(c), v));
        }
        raw.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(raw.len());
        for (r, c, v) in raw {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        let q = Self { dim, entries, jitter };
        let diag = q.diagonal();
        if let Some(index) = diag.iter().position(|d| *d + jitter <= 0.0) {
            return Err(GmrfError::NonPositiveDiagonal { index });
        }
        Ok(q)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::from_triplets(dim, (0..dim).map(|i| (i, i, 1.0)), 0.0)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_triplets(diag.len(), diag.iter().enumerate().map(|(i, &d)| (i, i, d)), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    /// Folds the jitter into the stored diagonal and resets it to zero.
    pub fn with_jitter_applied(&self) -> Self {
        let mut entries = self.entries.clone();
        if self.jitter > 0.0 {
            let mut missing: Vec<(usize, usize, f64)> = Vec::new();
            let mut seen = vec![false; self.dim];
            for e in entries.iter_mut().filter(|e| e.0 == e.1) {
                e.2 += self.jitter;
                seen[e.0] = true;
            }
            for (i, s) in seen.iter().enumerate() {
                if !s {
                    missing.push((i, i, self.jitter));
                }
            }
            entries.extend(missing);
            entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        }
        Self { dim: self.dim, entries, jitter: 0.0 }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&(r, c, v)| (r, c, v * factor)).collect(),
            jitter: self.jitter,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for &(r, c, v) in &self.entries {
            if r == c {
                d[r] += v;
            }
        }
        d
    }

    /// `(Q + jitter·I) x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().map(|v| v * self.jitter).collect();
        for &(r, c, v) in &self.entries {
            out[r] += v * x[c];
            if r != c {
                out[c] += v * x[r];
            }
        }
        out
    }

    /// `xᵀ (Q + jitter·I) x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut acc = self.jitter * x.iter().map(|v| v * v).sum::<f64>();
        for &(r, c, v) in &self.entries {
            if r == c {
                acc += v * x[r] * x[r];
            } else {
                acc += 2.0 * v * x[r] * x[c];
            }
        }
        acc
    }

    /// Dense copy of `Q` (without the jitter).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
            if r != c {
                m[(c, r)] += v;
            }
        }
        m
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        // perm[new] = old
        let mut inverse = vec![0; self.dim];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let entries = self
            .entries
            .iter()
            .map(|&(r, c, v)| {
                let (a, b) = (inverse[r], inverse[c]);
                (a.max(b), a.min(b), v)
            })
            .collect::<Vec<_>>();
        let mut q = Self { dim: self.dim, entries, jitter: self.jitter };
        q.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        q
    }
}

/// Second-order random-walk precision `τ·R` where `R = DᵀD` for the
/// `(n-2) x n` second-difference operator `D`. The returned matrix carries
/// [`DEFAULT_JITTER`] since `R` has rank `n - 2`.
pub fn build_rw2_precision(n: usize, tau: f64) -> Result<SparsePrecision> {
    if n < 3 {
        return Err(GmrfError::InvalidDimension(format!("rw2 needs n >= 3, got {n}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(GmrfError::InvalidDimension(format!("rw2 precision must be positive, got {tau}")));
    }
    let mut triplets = Vec::with_capacity(9 * (n - 2));
    let stencil = [1.0, -2.0, 1.0];
    for k in 0..n - 2 {
        for a in 0..3 {
            for b in 0..=a {
                triplets.push((k + a, k + b, tau * stencil[a] * stencil[b]));
            }
        }
    }
    SparsePrecision::from_triplets(n, triplets, DEFAULT_JITTER)
}

/// Fill-reducing ordering applied before factorization.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Ordering {
    #[default]
    Natural,
    /// `perm[new] = old`.
    Permutation(Vec<usize>),
}

/// Lower-triangular envelope factor with `P(Q + jitter·I)Pᵀ = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    dim: usize,
    first: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
    log_det: f64,
    jitter: f64,
    perm: Option<Vec<usize>>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `log |Q + jitter·I|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        if j < self.first[i] || j > i {
            0.0
        } else {
            self.values[self.offsets[i] + j - self.first[i]]
        }
    }

    /// Solves `(Q + jitter·I) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim, "right-hand side length");
        let mut y = match &self.perm {
            Some(p) => p.iter().map(|&old| b[old]).collect(),
            None => b.to_vec(),
        };
        self.forward_in_place(&mut y);
        self.backward_in_place(&mut y);
        match &self.perm {
            Some(p) => {
                let mut x = vec![0.0; self.dim];
                for (new, &old) in p.iter().enumerate() {
                    x[old] = y[new];
                }
                x
            }
            None => y,
        }
    }

    fn forward_in_place(&self, y: &mut [f64]) {
        for i in 0..self.dim {
            let row = self.row(i);
            let f = self.first[i];
            let mut s = y[i];
            for (k, l) in row[..row.len() - 1].iter().enumerate() {
                s -= l * y[f + k];
            }
            y[i] = s / row[row.len() - 1];
        }
    }

    fn backward_in_place(&self, y: &mut [f64]) {
        for i in (0..self.dim).rev() {
            let row = self.row(i);
            let f = self.first[i];
            let xi = y[i] / row[row.len() - 1];
            y[i] = xi;
            for (k, l) in row[..row.len() - 1].iter().enumerate() {
                y[f + k] -= l * xi;
            }
        }
    }

    /// `L x` in the factor's (possibly permuted) coordinates.
    pub fn l_mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let f = self.first[i];
                self.row(i).iter().enumerate().map(|(k, l)| l * x[f + k]).sum()
            })
            .collect()
    }

    /// `Lᵀ x` in the factor's (possibly permuted) coordinates.
    pub fn lt_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let f = self.first[i];
            for (k, l) in self.row(i).iter().enumerate() {
                out[f + k] += l * x[i];
            }
        }
        out
    }

    /// `(Q + jitter·I) x` reconstructed from the factor, in original
    /// coordinates.
    pub fn reconstruct_mul(&self, x: &[f64]) -> Vec<f64> {
        let xp: Vec<f64> = match &self.perm {
            Some(p) => p.iter().map(|&old| x[old]).collect(),
            None => x.to_vec(),
        };
        let yp = self.l_mul(&self.lt_mul(&xp));
        match &self.perm {
            Some(p) => {
                let mut y = vec![0.0; self.dim];
                for (new, &old) in p.iter().enumerate() {
                    y[old] = yp[new];
                }
                y
            }
            None => yp,
        }
    }

    /// Dense `L` in factor coordinates.
    pub fn to_dense_lower(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.at(i, j))
    }

    /// Dense `(Q + jitter·I)⁻¹`, one solve per column.
    pub fn inverse_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        let mut e = vec![0.0; self.dim];
        for j in 0..self.dim {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            out.set_column(j, &DVector::from_vec(col));
        }
        // Symmetrize away rounding asymmetry.
        let t = out.transpose();
        (out + t) * 0.5
    }
}

pub fn cholesky(q: &SparsePrecision) -> Result<CholeskyFactor> {
    cholesky_with_ordering(q, &Ordering::Natural)
}

pub fn cholesky_with_ordering(q: &SparsePrecision, ordering: &Ordering) -> Result<CholeskyFactor> {
    let (work, perm) = match ordering {
        Ordering::Natural => (None, None),
        Ordering::Permutation(p) => {
            let mut check = p.clone();
            check.sort_unstable();
            if p.len() != q.dim || check.iter().enumerate().any(|(i, &v)| i != v) {
                return Err(GmrfError::InvalidDimension("ordering is not a permutation".into()));
            }
            (Some(q.permuted(p)), Some(p.clone()))
        }
    };
    let q = work.as_ref().unwrap_or(q);
    let n = q.dim;

    let mut first: Vec<usize> = (0..n).collect();
    for &(r, c, _) in &q.entries {
        first[r] = first[r].min(c);
    }
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    for i in 0..n {
        offsets.push(offsets[i] + i - first[i] + 1);
    }
    let mut values = vec![0.0; offsets[n]];
    for &(r, c, v) in &q.entries {
        values[offsets[r] + c - first[r]] += v;
    }
    for i in 0..n {
        values[offsets[i + 1] - 1] += q.jitter;
    }

    let mut log_det = 0.0;
    for i in 0..n {
        let fi = first[i];
        for j in fi..i {
            let fj = first[j];
            let start = fi.max(fj);
            let mut s = values[offsets[i] + j - fi];
            for k in start..j {
                s -= values[offsets[i] + k - fi] * values[offsets[j] + k - fj];
            }
            let djj = values[offsets[j + 1] - 1];
            values[offsets[i] + j - fi] = s / djj;
        }
        let mut d = values[offsets[i + 1] - 1];
        for k in fi..i {
            let l = values[offsets[i] + k - fi];
            d -= l * l;
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(GmrfError::FactorizationFailure { pivot: i });
        }
        let l = d.sqrt();
        values[offsets[i + 1] - 1] = l;
        log_det += 2.0 * l.ln();
    }

    Ok(CholeskyFactor { dim: n, first, offsets, values, log_det, jitter: q.jitter, perm })
}

/// Log density of `N(mean, (Q + jitter·I)⁻¹)` at `x`.
pub fn gaussian_logdensity(q: &SparsePrecision, mean: &[f64], x: &[f64]) -> Result<f64> {
    let factor = cholesky(q)?;
    gaussian_logdensity_factored(q, &factor, mean, x)
}

/// As [`gaussian_logdensity`] with a factor that has already been computed.
pub fn gaussian_logdensity_factored(
    q: &SparsePrecision,
    factor: &CholeskyFactor,
    mean: &[f64],
    x: &[f64],
) -> Result<f64> {
    let d = q.dim();
    for len in [mean.len(), x.len(), factor.dim()] {
        if len != d {
            return Err(GmrfError::DimensionMismatch { expected: d, got: len });
        }
    }
    let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    Ok(-0.5 * d as f64 * LN_2PI + 0.5 * factor.log_det() - 0.5 * q.quadratic_form(&r))
}

/// Linear constraints `A x = e`; `A` is stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl LinearConstraint {
    pub fn new(matrix: DMatrix<f64>, rhs: Vec<f64>) -> Result<Self> {
        if matrix.nrows() != rhs.len() {
            return Err(GmrfError::DimensionMismatch { expected: matrix.nrows(), got: rhs.len() });
        }
        if matrix.nrows() > 0 && (matrix.clone() * matrix.transpose()).cholesky().is_none() {
            return Err(GmrfError::InvalidConstraint("constraint matrix is rank deficient".into()));
        }
        Ok(Self { matrix, rhs: DVector::from_vec(rhs) })
    }

    pub fn none(dim: usize) -> Self {
        Self { matrix: DMatrix::zeros(0, dim), rhs: DVector::zeros(0) }
    }

    /// `1ᵀx = 0` over `range` inside a vector of length `dim`.
    pub fn sum_to_zero(dim: usize, range: std::ops::Range<usize>) -> Self {
        let mut a = DMatrix::zeros(1, dim);
        for j in range {
            a[(0, j)] = 1.0;
        }
        Self { matrix: a, rhs: DVector::zeros(1) }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    /// `A x - e`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let ax = &self.matrix * DVector::from_column_slice(x);
        (ax - &self.rhs).iter().copied().collect()
    }
}

/// Pieces of the kriging correction shared by the mean and covariance.
struct Kriging {
    v: DMatrix<f64>,
    w_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

fn kriging(l: &CholeskyFactor, c: &LinearConstraint) -> Result<Kriging> {
    let n = l.dim();
    if c.matrix.ncols() != n {
        return Err(GmrfError::DimensionMismatch { expected: n, got: c.matrix.ncols() });
    }
    if c.rows() >= n {
        return Err(GmrfError::InvalidConstraint(format!("{} constraints on a field of dimension {n}", c.rows())));
    }
    let k = c.rows();
    let mut v = DMatrix::zeros(n, k);
    for r in 0..k {
        let row: Vec<f64> = c.matrix.row(r).iter().copied().collect();
        v.set_column(r, &DVector::from_vec(l.solve(&row)));
    }
    let w = &c.matrix * &v;
    let w = (&w + w.transpose()) * 0.5;
    let w_chol =
        w.cholesky().ok_or_else(|| GmrfError::InvalidConstraint("A Q⁻¹ Aᵀ is not positive definite".into()))?;
    Ok(Kriging { v, w_chol })
}

/// Solves `Q x = b` and corrects the solution by conditioning on `A x = e`.
/// With no constraint rows this is a plain solve.
pub fn solve_constrained(l: &CholeskyFactor, b: &[f64], c: &LinearConstraint) -> Result<Vec<f64>> {
    if b.len() != l.dim() {
        return Err(GmrfError::DimensionMismatch { expected: l.dim(), got: b.len() });
    }
    let x = l.solve(b);
    if c.rows() == 0 {
        return Ok(x);
    }
    let kr = kriging(l, c)?;
    Ok(apply_kriging(&kr, c, x))
}

fn apply_kriging(kr: &Kriging, c: &LinearConstraint, x: Vec<f64>) -> Vec<f64> {
    let mut x = DVector::from_vec(x);
    // Second pass cleans up the rounding left by the first.
    for _ in 0..2 {
        let resid = &c.matrix * &x - &c.rhs;
        let corr = &kr.v * kr.w_chol.solve(&resid);
        x -= corr;
    }
    x.iter().copied().collect()
}

/// Constrained mean and dense covariance of `N(Q⁻¹b, Q⁻¹)` given `A x = e`.
pub fn constrained_moments(l: &CholeskyFactor, b: &[f64], c: &LinearConstraint) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let cov = l.inverse_dense();
    let x = l.solve(b);
    if c.rows() == 0 {
        return Ok((x, cov));
    }
    let kr = kriging(l, c)?;
    let mean = apply_kriging(&kr, c, x);
    let correction = &kr.v * kr.w_chol.solve(&kr.v.transpose());
    let cov = cov - correction;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}
