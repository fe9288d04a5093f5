use nalgebra::{DMatrix, DVector};

use crate::dataset::{row_sum, Dataset, SpeakerGroup};
use crate::em::{ordered_reduce, run_em, Trace, TrainOptions};
use crate::error::{Error, Result};
use crate::jb::{BlockGaussian, SessionFactor, INIT_RIDGE};
use crate::linalg::{gen_eig_simdiag, SpdMatrix, LN_2PI};

/// Averaged PLDA: each speaker contributes only `x̄_i = s_i / m_i`, modeled
/// as `x̄_i = μ_i + ε̄_i` with `μ_i ~ N(0, Γ)` and `ε̄_i ~ N(0, Λ / m_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KaldiPldaModel {
    mean: DVector<f64>,
    gamma: SpdMatrix,
    lambda: SpdMatrix,
}

impl KaldiPldaModel {
    pub fn new(mean: DVector<f64>, gamma: SpdMatrix, lambda: SpdMatrix) -> Result<Self> {
        let d = lambda.dim();
        if gamma.dim() != d || mean.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: if gamma.dim() != d { gamma.dim() } else { mean.len() },
            });
        }
        Ok(Self { mean, gamma, lambda })
    }

    /// `Γ = Λ = ½ T + 1e-6 (tr T / d) I`.
    pub fn initialize(dataset: &Dataset) -> Result<Self> {
        let total = dataset.total_covariance()?;
        let d = dataset.dim();
        let ridge = INIT_RIDGE * total.trace() / d as f64;
        let half = SpdMatrix::from_accumulator(&total * 0.5 + DMatrix::identity(d, d) * ridge);
        Self::new(dataset.global_mean().clone(), half.clone(), half)
    }

    pub fn dim(&self) -> usize {
        self.lambda.dim()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn gamma(&self) -> &SpdMatrix {
        &self.gamma
    }

    pub fn lambda(&self) -> &SpdMatrix {
        &self.lambda
    }

    fn gaussian(&self) -> Result<BlockGaussian> {
        BlockGaussian::new(&self.gamma, &self.lambda)
    }
}

fn check(dataset: &Dataset, d: usize) -> Result<()> {
    if dataset.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: dataset.dim(),
        });
    }
    dataset.require_nonempty()
}

/// `Σ_i log N(x̄_i; 0, Γ + Λ / m_i)`.
pub fn kaldi_loglik(dataset: &Dataset, model: &KaldiPldaModel) -> Result<f64> {
    check(dataset, model.dim())?;
    let gauss = model.gaussian()?;
    let factors = gauss.factors_for(dataset.speakers().iter().map(SpeakerGroup::len))?;
    ordered_reduce(
        dataset.speakers(),
        || 0.0,
        |acc, g| {
            let avg = g.sum() / g.len() as f64;
            *acc += average_loglik(&factors[&g.len()], &avg);
            Ok(())
        },
        |a, b| *a += b,
    )
}

/// `log N(x̄; 0, Γ + Λ/m)` using `Γ + Λ/m = (Λ + mΓ)/m`.
fn average_loglik(f: &SessionFactor, avg: &DVector<f64>) -> f64 {
    let m = f.sessions() as f64;
    let d = avg.len() as f64;
    let logdet = f.total().logdet() - d * m.ln();
    let quad = m * f.total().quad_form(avg);
    -0.5 * (d * LN_2PI + logdet + quad)
}

struct KaldiAccumulator {
    loglik: f64,
    between: DMatrix<f64>,
    within: DMatrix<f64>,
}

/// One EM iteration over `(μ_i, ε̄_i)` given the speaker averages.
///
/// `Cov_i = Γ − Γ(Γ + Λ/m_i)⁻¹Γ`, `μ̂_i = Γ(Γ + Λ/m_i)⁻¹ x̄_i`,
/// `Γ' = (1/N) Σ_i (Cov_i + μ̂_i μ̂_iᵀ)`,
/// `Λ' = (1/N) Σ_i m_i (Cov_i + (x̄_i − μ̂_i)(x̄_i − μ̂_i)ᵀ)`.
/// The data enter only through `(s_i, m_i)`.
pub fn kaldi_em_step(
    dataset: &Dataset,
    model: &KaldiPldaModel,
) -> Result<(KaldiPldaModel, f64)> {
    let d = model.dim();
    check(dataset, d)?;
    let gauss = model.gaussian()?;
    let factors = gauss.factors_for(dataset.speakers().iter().map(SpeakerGroup::len))?;
    let covs: std::collections::BTreeMap<usize, DMatrix<f64>> = factors
        .iter()
        .map(|(&m, f)| (m, gauss.posterior_cov(f)))
        .collect();

    let acc = ordered_reduce(
        dataset.speakers(),
        || KaldiAccumulator {
            loglik: 0.0,
            between: DMatrix::zeros(d, d),
            within: DMatrix::zeros(d, d),
        },
        |acc, g| {
            let m = g.len();
            let mf = m as f64;
            let f = &factors[&m];
            let sum = row_sum(g.vectors());
            let avg = &sum / mf;
            acc.loglik += average_loglik(f, &avg);
            let mu_hat = gauss.posterior_mean(f, &sum);
            let resid = &avg - &mu_hat;
            let cov = &covs[&m];
            acc.between += cov + &mu_hat * mu_hat.transpose();
            acc.within += (cov + &resid * resid.transpose()) * mf;
            Ok(())
        },
        |a, b| {
            a.loglik += b.loglik;
            a.between += b.between;
            a.within += b.within;
        },
    )?;

    let n = dataset.num_speakers() as f64;
    let next = KaldiPldaModel::new(
        model.mean.clone(),
        SpdMatrix::from_accumulator(acc.between / n),
        SpdMatrix::from_accumulator(acc.within / n),
    )?;
    Ok((next, acc.loglik))
}

pub fn train_kaldi(
    dataset: &Dataset,
    init: KaldiPldaModel,
    options: TrainOptions,
) -> Result<(KaldiPldaModel, Trace)> {
    run_em(
        init,
        options,
        |m| kaldi_em_step(dataset, m),
        |m| kaldi_loglik(dataset, m),
    )
}

/// Scores averaged enrollment/test sets in the simultaneously diagonalized
/// `(Γ, Λ)` basis.
#[derive(Debug, Clone)]
pub struct KaldiScorer {
    phi: DMatrix<f64>,
    psi: Vec<f64>,
}

impl KaldiScorer {
    pub fn new(model: &KaldiPldaModel) -> Result<Self> {
        let (phi, psi) = gen_eig_simdiag(model.gamma(), model.lambda())?;
        Ok(Self {
            phi,
            psi: psi.values().to_vec(),
        })
    }

    /// Per dimension, with `a = 1/m_e`, `b = 1/m_t`, the same-speaker pair
    /// covariance is `[[ψ+a, ψ], [ψ, ψ+b]]` against independent marginals.
    pub fn score(&self, enroll: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<f64> {
        let d = self.phi.nrows();
        for x in [enroll, test] {
            if x.nrows() == 0 {
                return Err(Error::EmptySet);
            }
            if x.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x.ncols(),
                });
            }
        }
        let a = 1.0 / enroll.nrows() as f64;
        let b = 1.0 / test.nrows() as f64;
        let u = self.phi.tr_mul(&(row_sum(enroll) * a));
        let v = self.phi.tr_mul(&(row_sum(test) * b));
        let mut llr = 0.0;
        for (k, &psi) in self.psi.iter().enumerate() {
            if psi == 0.0 {
                continue;
            }
            let (uk, vk) = (u[k], v[k]);
            let (ea, eb) = (psi + a, psi + b);
            let det = psi * (a + b) + a * b;
            let joint = (eb * uk * uk - 2.0 * psi * uk * vk + ea * vk * vk) / det;
            let marg = uk * uk / ea + vk * vk / eb;
            llr -= 0.5 * (det.ln() - ea.ln() - eb.ln() + joint - marg);
        }
        Ok(llr)
    }
}

pub fn kaldi_score(
    enroll: &DMatrix<f64>,
    test: &DMatrix<f64>,
    model: &KaldiPldaModel,
) -> Result<f64> {
    KaldiScorer::new(model)?.score(enroll, test)
}
