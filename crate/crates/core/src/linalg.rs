//! Dense symmetric-matrix primitives.
//!
//! Everything structured in this crate (block likelihoods, simultaneous
//! diagonalization, pair scoring) bottoms out in the handful of routines
//! here: a Cholesky-backed factor with log-determinant and solves, the
//! whitened generalized eigenproblem, and a brute-force Gaussian log-density
//! used as the reference for every fast path.

use std::f64::consts::PI;
use std::ops::Deref;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry above which a matrix is rejected instead of symmetrized.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Generalized eigenvalues below this fraction of the largest are clamped to 0.
pub const EIGEN_CLAMP: f64 = 1e-12;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Symmetric positive (semi)definite matrix.
///
/// Construction symmetrizes the input as `(M + Mᵀ)/2` after checking that the
/// two triangles agree to [`SYMMETRY_TOL`]. Definiteness is checked lazily by
/// the operations that need an inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let asymmetry = relative_asymmetry(&m);
        if asymmetry > SYMMETRY_TOL {
            return Err(Error::AsymmetricInput { asymmetry });
        }
        Ok(Self(symmetrized(m)))
    }

    /// Symmetrizes without the asymmetry check; used for EM accumulators
    /// whose symmetry holds by construction up to rounding.
    pub(crate) fn from_accumulator(m: DMatrix<f64>) -> Self {
        Self(symmetrized(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(values: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }
}

impl Deref for SpdMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Nonincreasing, finite, nonnegative spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagSpectrum(Vec<f64>);

impl DiagSpectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "spectrum entries must be finite and nonnegative".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "spectrum must be sorted in descending order".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.first().copied().unwrap_or(0.0)
    }
}

pub(crate) fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Cholesky factorization of a strictly positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>, context: &'static str) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let asymmetry = relative_asymmetry(m);
        if asymmetry > SYMMETRY_TOL {
            return Err(Error::AsymmetricInput { asymmetry });
        }
        let sym = symmetrized(m.clone());
        if sym.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { context });
        }
        let chol = Cholesky::new(sym).ok_or(Error::NotPositiveDefinite { context })?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !logdet.is_finite() {
            return Err(Error::NotPositiveDefinite { context });
        }
        Ok(Self { chol, logdet })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrized(self.chol.inverse())
    }

    /// `xᵀ M⁻¹ x`, evaluated as the squared norm of `L⁻¹x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let mut y = x.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut y);
        y.norm_squared()
    }

    /// `L⁻¹ B` for the lower factor `L`.
    pub fn whiten(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut y);
        y
    }

    /// `L⁻ᵀ B` for the lower factor `L`.
    pub fn unwhiten_transpose(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = b.clone();
        self.chol.l_dirty().tr_solve_lower_triangular_mut(&mut y);
        y
    }
}

/// Returns `(log det M, X)` with `M X = B`.
pub fn spd_logdet_solve(m: &SpdMatrix, b: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    if b.nrows() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: b.nrows(),
        });
    }
    let factor = SpdFactor::new(m, "spd_logdet_solve")?;
    Ok((factor.logdet(), factor.solve(b)))
}

/// Simultaneous diagonalization of a pair `(S_b, S_w)`.
///
/// Returns `Phi` and `kappa` such that `Phiᵀ S_w Phi = I` and
/// `Phiᵀ S_b Phi = diag(kappa)`, with `kappa` descending. The problem is
/// whitened with the Cholesky factor of `S_w` and then solved as a symmetric
/// eigenproblem. Eigenvalues below [`EIGEN_CLAMP`] times the largest are set
/// to zero. Each column of `Phi` is sign-fixed so that its largest-magnitude
/// entry is positive.
pub fn gen_eig_simdiag(
    s_b: &DMatrix<f64>,
    s_w: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DiagSpectrum)> {
    let d = s_w.nrows();
    if s_b.nrows() != d || s_b.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: s_b.nrows(),
        });
    }
    let asymmetry = relative_asymmetry(s_b);
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::AsymmetricInput { asymmetry });
    }
    let w = SpdFactor::new(s_w, "within-class covariance")?;

    // C = L⁻¹ S_b L⁻ᵀ
    let half = w.whiten(&symmetrized(s_b.clone()));
    let c = symmetrized(w.whiten(&half.transpose()));
    let (values, vectors) = symmetric_eigen_desc(c);

    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let kappa: Vec<f64> = values
        .iter()
        .map(|&v| if top > 0.0 && v >= EIGEN_CLAMP * top { v } else { 0.0 })
        .collect();

    let mut phi = w.unwhiten_transpose(&vectors);
    fix_column_signs(&mut phi);
    Ok((phi, DiagSpectrum(kappa)))
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted descending.
pub fn symmetric_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub(crate) fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut pivot = 0.0f64;
        for &v in col.iter() {
            if v.abs() > pivot.abs() {
                pivot = v;
            }
        }
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Factor `F` with `F Fᵀ = M` for a positive semidefinite `M`, built from the
/// eigendecomposition (negative rounding noise is clamped to zero).
pub fn psd_sqrt_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, mut vectors) = symmetric_eigen_desc(symmetrized(m.clone()));
    for (k, v) in values.iter().enumerate() {
        let scale = v.max(0.0).sqrt();
        vectors.column_mut(k).scale_mut(scale);
    }
    vectors
}

/// Brute-force `log N(x; 0, Σ)`: `-½(n log 2π + log det Σ + xᵀΣ⁻¹x)`.
pub fn gaussian_logpdf_dense(x: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if sigma.nrows() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: sigma.nrows(),
            found: x.len(),
        });
    }
    let factor = SpdFactor::new(sigma, "dense Gaussian covariance")?;
    let n = x.len() as f64;
    Ok(-0.5 * (n * (2.0 * PI).ln() + factor.logdet() + factor.quad_form(x)))
}
