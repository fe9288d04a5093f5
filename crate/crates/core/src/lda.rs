//! Fisher LDA projection followed by cosine scoring.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{row_sum, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{gen_eig_simdiag, symmetrized, DiagSpectrum};

/// Ridge added to the within-class scatter, relative to its mean eigenvalue.
pub const WITHIN_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaProjection {
    mean: DVector<f64>,
    /// `d × p`
    w: DMatrix<f64>,
    eigenvalues: DiagSpectrum,
}

impl LdaProjection {
    pub fn new(mean: DVector<f64>, w: DMatrix<f64>, eigenvalues: DiagSpectrum) -> Result<Self> {
        if mean.len() != w.nrows() {
            return Err(Error::DimensionMismatch {
                expected: w.nrows(),
                found: mean.len(),
            });
        }
        if w.ncols() > w.nrows() {
            return Err(Error::RankDeficient {
                requested: w.ncols(),
                available: w.nrows(),
            });
        }
        if eigenvalues.len() != w.ncols() {
            return Err(Error::DimensionMismatch {
                expected: w.ncols(),
                found: eigenvalues.len(),
            });
        }
        Ok(Self {
            mean,
            w,
            eigenvalues,
        })
    }

    pub fn dim_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Generalized eigenvalues of the retained directions.
    pub fn eigenvalues(&self) -> &DiagSpectrum {
        &self.eigenvalues
    }

    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim_in() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_in(),
                found: x.len(),
            });
        }
        Ok(self.w.tr_mul(x))
    }

    /// Averages the rows of a session set, projects, and returns the
    /// projected vector.
    pub fn project_set(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.nrows() == 0 {
            return Err(Error::EmptySet);
        }
        if x.ncols() != self.dim_in() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_in(),
                found: x.ncols(),
            });
        }
        self.project(&(row_sum(x) / x.nrows() as f64))
    }

    /// Cosine similarity of two projected session sets.
    pub fn score(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<f64> {
        cosine_score(&self.project_set(x1)?, &self.project_set(x2)?)
    }
}

/// Between- and (regularized) within-class scatter, both normalized by the
/// number of vectors.
pub fn class_scatters(dataset: &Dataset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    dataset.require_nonempty()?;
    let d = dataset.dim();
    let mean = dataset.vector_mean();
    let mut between = DMatrix::zeros(d, d);
    let mut within = DMatrix::zeros(d, d);
    for g in dataset.speakers() {
        let m = g.len() as f64;
        let class_mean = g.sum() / m;
        let offset = &class_mean - &mean;
        between += &offset * offset.transpose() * m;
        for row in g.vectors().row_iter() {
            let r = row.transpose() - &class_mean;
            within += &r * r.transpose();
        }
    }
    let n = dataset.num_vectors() as f64;
    let mut within = within / n;
    let ridge = WITHIN_RIDGE * within.trace() / d as f64;
    for k in 0..d {
        within[(k, k)] += ridge;
    }
    Ok((symmetrized(between / n), symmetrized(within)))
}

/// Fits a `p`-dimensional Fisher LDA projection; `W` holds the top `p`
/// generalized eigenvectors of (between, within), normalized so that
/// `Wᵀ S_w W = I`.
pub fn fit_lda(dataset: &Dataset, p: usize) -> Result<LdaProjection> {
    let d = dataset.dim();
    let available = d.min(dataset.num_speakers().saturating_sub(1));
    if p == 0 || p > available {
        return Err(Error::RankDeficient {
            requested: p,
            available,
        });
    }
    let (between, within) = class_scatters(dataset)?;
    lda_from_scatters(dataset.global_mean().clone(), &between, &within, p)
}

pub fn lda_from_scatters(
    mean: DVector<f64>,
    between: &DMatrix<f64>,
    within: &DMatrix<f64>,
    p: usize,
) -> Result<LdaProjection> {
    let (phi, values) = gen_eig_simdiag(between, within)?;
    if p > phi.ncols() {
        return Err(Error::RankDeficient {
            requested: p,
            available: phi.ncols(),
        });
    }
    Ok(LdaProjection {
        mean,
        w: phi.columns(0, p).into_owned(),
        eigenvalues: DiagSpectrum::new(values.values()[..p].to_vec())?,
    })
}

/// `uᵀv / (‖u‖ ‖v‖)`.
pub fn cosine_score(u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((u.dot(v) / (nu * nv)).clamp(-1.0, 1.0))
}
