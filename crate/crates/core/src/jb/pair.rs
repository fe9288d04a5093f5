//! Singleton-pair scoring through the quadratic form
//! `r(x1, x2) = ½ x1ᵀ A x1 + ½ x2ᵀ A x2 − x1ᵀ G x2 + c`,
//! with `A` and `G` held as truncated eigendecompositions.

use nalgebra::{DMatrix, DVector};

use super::{JbModel, RankPolicy};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen_desc, symmetrized, SpdFactor};

/// Symmetric matrix stored as `V diag(λ) Vᵀ`, ordered by `|λ|` descending.
#[derive(Debug, Clone, PartialEq)]
struct LowRank {
    vectors: DMatrix<f64>,
    values: Vec<f64>,
}

impl LowRank {
    fn from_symmetric(m: DMatrix<f64>, policy: RankPolicy) -> Result<Self> {
        let (values, vectors) = symmetric_eigen_desc(m);
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
        let magnitudes: Vec<f64> = order.iter().map(|&k| values[k].abs()).collect();
        let r = policy.resolve(&magnitudes)?;
        let mut kept = DMatrix::zeros(vectors.nrows(), r);
        for (dst, &src) in order.iter().take(r).enumerate() {
            kept.set_column(dst, &vectors.column(src));
        }
        Ok(Self {
            vectors: kept,
            values: order.iter().take(r).map(|&k| values[k]).collect(),
        })
    }

    fn rank(&self) -> usize {
        self.values.len()
    }

    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(x)
    }

    fn dense(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.rank(), |i, k| {
            self.vectors[(i, k)] * self.values[k]
        });
        scaled * self.vectors.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScorer {
    a: LowRank,
    g: LowRank,
    constant: f64,
}

/// Builds the pair scorer for one enrollment and one test vector.
///
/// With `S_T = S_μ + S_ε` and `B = 2 S_μ + S_ε`, the same-speaker covariance
/// of a stacked pair inverts blockwise to `[[P, Q], [Q, P]]` where
/// `P = ½(S_ε⁻¹ + B⁻¹)`, `Q = ½(B⁻¹ − S_ε⁻¹)`. Then `A = S_T⁻¹ − P`, `G = Q`
/// and `c = log det S_T − ½(log det S_ε + log det B)`.
pub fn make_pair_scorer(model: &JbModel, policy: RankPolicy) -> Result<PairScorer> {
    let s_mu = model.s_mu().as_matrix();
    let s_eps = model.s_eps().as_matrix();
    let total = SpdFactor::new(&(s_mu + s_eps), "S_mu + S_eps")?;
    let within = SpdFactor::new(s_eps, "within-speaker covariance")?;
    let doubled = SpdFactor::new(&(s_mu * 2.0 + s_eps), "2 S_mu + S_eps")?;

    let total_inv = total.inverse();
    let within_inv = within.inverse();
    let doubled_inv = doubled.inverse();
    let p = (&within_inv + &doubled_inv) * 0.5;
    let q = (&doubled_inv - &within_inv) * 0.5;
    let a = symmetrized(total_inv - p);
    let constant = total.logdet() - 0.5 * (within.logdet() + doubled.logdet());
    Ok(PairScorer {
        a: LowRank::from_symmetric(a, policy)?,
        g: LowRank::from_symmetric(symmetrized(q), policy)?,
        constant,
    })
}

impl PairScorer {
    pub fn rank_a(&self) -> usize {
        self.a.rank()
    }

    pub fn rank_g(&self) -> usize {
        self.g.rank()
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Reconstructed `A` (at the retained rank).
    pub fn dense_a(&self) -> DMatrix<f64> {
        self.a.dense()
    }

    /// Reconstructed `G` (at the retained rank).
    pub fn dense_g(&self) -> DMatrix<f64> {
        self.g.dense()
    }

    pub fn score(&self, x1: &DVector<f64>, x2: &DVector<f64>) -> Result<f64> {
        let d = self.a.vectors.nrows();
        for x in [x1, x2] {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x.len(),
                });
            }
        }
        let (u1, u2) = (self.a.project(x1), self.a.project(x2));
        let quad_a: f64 = self
            .a
            .values
            .iter()
            .enumerate()
            .map(|(k, &l)| 0.5 * l * (u1[k] * u1[k] + u2[k] * u2[k]))
            .sum();
        let (v1, v2) = (self.g.project(x1), self.g.project(x2));
        let cross: f64 = self
            .g
            .values
            .iter()
            .enumerate()
            .map(|(k, &l)| l * v1[k] * v2[k])
            .sum();
        Ok(quad_a - cross + self.constant)
    }

    /// Scores row sets; only singleton sets are supported.
    pub fn score_sets(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<f64> {
        if x1.nrows() == 0 || x2.nrows() == 0 {
            return Err(Error::EmptySet);
        }
        if x1.nrows() != 1 || x2.nrows() != 1 {
            return Err(Error::PathUnsupported(format!(
                "pair scorer needs single-vector sets, got {} and {}",
                x1.nrows(),
                x2.nrows()
            )));
        }
        self.score(&x1.row(0).transpose(), &x2.row(0).transpose())
    }
}
