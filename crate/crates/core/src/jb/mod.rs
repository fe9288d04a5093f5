//! Joint Bayesian model `x_ij = μ_i + ε_ij` with `μ_i ~ N(0, S_μ)` and
//! `ε_ij ~ N(0, S_ε)`.
//!
//! Training is EM over the stacked hidden variables `(μ_i, ε_i1, …, ε_im)`.
//! Because every `ε_ij` is determined by `μ_i` and the data, the E-step only
//! needs the posterior of `μ_i`; the residual posteriors share its covariance.
//! The posterior covariance depends on the session count alone, so it is
//! computed once per distinct `m`.

mod likelihood;
mod pair;
mod sd;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

pub use likelihood::{BlockGaussian, SessionFactor, SetScorer};
pub use pair::{make_pair_scorer, PairScorer};
pub use sd::{jb_score_sd, make_sd_transform, RankPolicy, SdOrdering, SdTransform};

pub(crate) use likelihood::canonical_pair;

use crate::dataset::{Dataset, SpeakerGroup};
use crate::em::{ordered_reduce, run_em, EmMode, Trace, TrainOptions};
use crate::error::{Error, Result};
use crate::linalg::{SpdMatrix, SYMMETRY_TOL};

/// Trace-relative ridge added to the initial covariances.
pub const INIT_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct JbModel {
    mean: DVector<f64>,
    s_mu: SpdMatrix,
    s_eps: SpdMatrix,
}

impl JbModel {
    /// Positive definiteness of `S_ε` is checked where an inverse is needed,
    /// so degenerate EM outputs can still be inspected.
    pub fn new(mean: DVector<f64>, s_mu: SpdMatrix, s_eps: SpdMatrix) -> Result<Self> {
        let d = s_eps.dim();
        if s_mu.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: s_mu.dim(),
            });
        }
        if mean.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: mean.len(),
            });
        }
        Ok(Self { mean, s_mu, s_eps })
    }

    pub fn centered(s_mu: SpdMatrix, s_eps: SpdMatrix) -> Result<Self> {
        let d = s_eps.dim();
        Self::new(DVector::zeros(d), s_mu, s_eps)
    }

    /// `S_μ = S_ε = ½ T + 1e-6 (tr T / d) I`, with `T` the total covariance
    /// of the (centered) data.
    pub fn initialize(dataset: &Dataset) -> Result<Self> {
        let total = dataset.total_covariance()?;
        let d = dataset.dim();
        let ridge = INIT_RIDGE * total.trace() / d as f64;
        let half = &total * 0.5 + DMatrix::identity(d, d) * ridge;
        let cov = SpdMatrix::from_accumulator(half);
        Self::new(dataset.global_mean().clone(), cov.clone(), cov)
    }

    pub fn dim(&self) -> usize {
        self.s_eps.dim()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn s_mu(&self) -> &SpdMatrix {
        &self.s_mu
    }

    pub fn s_eps(&self) -> &SpdMatrix {
        &self.s_eps
    }

    pub fn with_mean(mut self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: mean.len(),
            });
        }
        self.mean = mean;
        Ok(self)
    }

    pub fn block_gaussian(&self) -> Result<BlockGaussian> {
        BlockGaussian::new(&self.s_mu, &self.s_eps)
    }
}

fn check_dim(dataset: &Dataset, d: usize) -> Result<()> {
    if dataset.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: dataset.dim(),
        });
    }
    dataset.require_nonempty()
}

/// Total data log-likelihood `Σ_i log N(x_i; 0, Σ_{x_i})`.
pub fn jb_loglik(dataset: &Dataset, model: &JbModel) -> Result<f64> {
    check_dim(dataset, model.dim())?;
    let gauss = model.block_gaussian()?;
    dataset_loglik(dataset, &gauss)
}

pub(crate) fn dataset_loglik(dataset: &Dataset, gauss: &BlockGaussian) -> Result<f64> {
    let factors = gauss.factors_for(dataset.speakers().iter().map(SpeakerGroup::len))?;
    ordered_reduce(
        dataset.speakers(),
        || 0.0,
        |acc, g| {
            *acc += gauss.set_loglik_with(&factors[&g.len()], g.vectors());
            Ok(())
        },
        |a, b| *a += b,
    )
}

struct JbAccumulator {
    loglik: f64,
    mean_scatter: DMatrix<f64>,
    resid_scatter: DMatrix<f64>,
}

impl JbAccumulator {
    fn new(d: usize) -> Self {
        Self {
            loglik: 0.0,
            mean_scatter: DMatrix::zeros(d, d),
            resid_scatter: DMatrix::zeros(d, d),
        }
    }

    fn merge(&mut self, other: Self) {
        self.loglik += other.loglik;
        self.mean_scatter += other.mean_scatter;
        self.resid_scatter += other.resid_scatter;
    }
}

/// Per-count posterior covariances `P_m`.
fn posterior_covs(
    gauss: &BlockGaussian,
    factors: &BTreeMap<usize, SessionFactor>,
) -> BTreeMap<usize, DMatrix<f64>> {
    factors
        .iter()
        .map(|(&m, f)| (m, gauss.posterior_cov(f)))
        .collect()
}

fn session_counts(dataset: &Dataset) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for g in dataset.speakers() {
        *counts.entry(g.len()).or_insert(0) += 1;
    }
    counts
}

/// One EM iteration. Returns the updated model and the log-likelihood of
/// the input model.
///
/// E-step: `P_i = S_μ − m_i S_μ (S_ε + m_i S_μ)⁻¹ S_μ`,
/// `μ̂_i = S_μ (S_ε + m_i S_μ)⁻¹ s_i`, `ε̂_ij = x_ij − μ̂_i`.
/// M-step (exact): `S_μ' = (1/N) Σ_i (P_i + μ̂_i μ̂_iᵀ)`,
/// `S_ε' = (1/M) (Σ_i m_i P_i + Σ_ij ε̂_ij ε̂_ijᵀ)`. The approximate mode drops
/// every `P_i` term.
pub fn jb_em_step(dataset: &Dataset, model: &JbModel, mode: EmMode) -> Result<(JbModel, f64)> {
    let d = model.dim();
    check_dim(dataset, d)?;
    let gauss = model.block_gaussian()?;
    let counts = session_counts(dataset);
    let factors = gauss.factors_for(counts.keys().copied())?;

    let acc = ordered_reduce(
        dataset.speakers(),
        || JbAccumulator::new(d),
        |acc, g| {
            let f = &factors[&g.len()];
            acc.loglik += gauss.set_loglik_with(f, g.vectors());
            let mu_hat = gauss.posterior_mean(f, &g.sum());
            acc.mean_scatter += &mu_hat * mu_hat.transpose();
            let mut resid = g.vectors().clone();
            let row = mu_hat.transpose();
            for mut r in resid.row_iter_mut() {
                r -= &row;
            }
            acc.resid_scatter += resid.transpose() * &resid;
            Ok(())
        },
        JbAccumulator::merge,
    )?;

    let n_speakers = dataset.num_speakers() as f64;
    let n_vectors = dataset.num_vectors() as f64;
    let mut mu_acc = acc.mean_scatter;
    let mut eps_acc = acc.resid_scatter;
    if mode == EmMode::Exact {
        for (m, p) in posterior_covs(&gauss, &factors) {
            let count = counts[&m] as f64;
            mu_acc += &p * count;
            eps_acc += &p * (count * m as f64);
        }
    }
    let next = JbModel::new(
        model.mean.clone(),
        SpdMatrix::from_accumulator(mu_acc / n_speakers),
        SpdMatrix::from_accumulator(eps_acc / n_vectors),
    )?;
    Ok((next, acc.loglik))
}

pub fn train_jb(
    dataset: &Dataset,
    init: JbModel,
    mode: EmMode,
    options: TrainOptions,
) -> Result<(JbModel, Trace)> {
    run_em(
        init,
        options,
        |m| jb_em_step(dataset, m, mode),
        |m| jb_loglik(dataset, m),
    )
}

/// Log-likelihood ratio `log p(x1 ∪ x2) − log p(x1) − log p(x2)` for two
/// centered row sets. Symmetric in its arguments bit for bit.
pub fn jb_score_full(x1: &DMatrix<f64>, x2: &DMatrix<f64>, model: &JbModel) -> Result<f64> {
    SetScorer::new(model.block_gaussian()?).score(x1, x2)
}

/// Checks `S_μ` and `S_ε` are numerically symmetric PSD (used by tests and
/// the CLI after training).
pub fn covariances_are_psd(model: &JbModel, tol: f64) -> bool {
    [model.s_mu(), model.s_eps()].into_iter().all(|m| {
        let asym = crate::linalg::relative_asymmetry(m);
        let eig = nalgebra::SymmetricEigen::new(m.as_matrix().clone());
        let scale = m.amax().max(1.0);
        asym <= SYMMETRY_TOL && eig.eigenvalues.iter().all(|&v| v >= -tol * scale)
    })
}
