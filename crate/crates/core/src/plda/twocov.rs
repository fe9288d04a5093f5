use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::em::{ordered_reduce, run_em, Trace, TrainOptions};
use crate::error::{Error, Result};
use crate::jb::{jb_loglik, JbModel};
use crate::linalg::SpdMatrix;

/// Two-covariance model: same parameters as [`JbModel`], but EM treats only
/// `μ_i` as hidden and maximizes `E[log p(x_i, μ_i)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoCovModel(pub JbModel);

impl TwoCovModel {
    pub fn initialize(dataset: &Dataset) -> Result<Self> {
        JbModel::initialize(dataset).map(TwoCovModel)
    }

    pub fn inner(&self) -> &JbModel {
        &self.0
    }
}

struct TwoCovAccumulator {
    loglik: f64,
    between: DMatrix<f64>,
    within: DMatrix<f64>,
}

/// One EM iteration: `S_μ' = (1/N) Σ_i (P_i + μ̂_i μ̂_iᵀ)` and
/// `S_ε' = (1/M) Σ_ij (P_i + (x_ij − μ̂_i)(x_ij − μ̂_i)ᵀ)`.
///
/// Posteriors are formed per speaker and the residual term per session.
pub fn twocov_em_step(dataset: &Dataset, model: &TwoCovModel) -> Result<(TwoCovModel, f64)> {
    let inner = &model.0;
    let d = inner.dim();
    if dataset.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: dataset.dim(),
        });
    }
    dataset.require_nonempty()?;
    let gauss = inner.block_gaussian()?;

    let acc = ordered_reduce(
        dataset.speakers(),
        || TwoCovAccumulator {
            loglik: 0.0,
            between: DMatrix::zeros(d, d),
            within: DMatrix::zeros(d, d),
        },
        |acc, g| {
            let f = gauss.session_factor(g.len())?;
            acc.loglik += gauss.set_loglik_with(&f, g.vectors());
            let post_cov = gauss.posterior_cov(&f);
            let mu_hat = gauss.posterior_mean(&f, &g.sum());
            acc.between += &post_cov + &mu_hat * mu_hat.transpose();
            for row in g.vectors().row_iter() {
                let r = row.transpose() - &mu_hat;
                acc.within += &post_cov + &r * r.transpose();
            }
            Ok(())
        },
        |a, b| {
            a.loglik += b.loglik;
            a.between += b.between;
            a.within += b.within;
        },
    )?;

    let n = dataset.num_speakers() as f64;
    let total = dataset.num_vectors() as f64;
    let next = JbModel::new(
        inner.mean().clone(),
        SpdMatrix::from_accumulator(acc.between / n),
        SpdMatrix::from_accumulator(acc.within / total),
    )?;
    Ok((TwoCovModel(next), acc.loglik))
}

pub fn twocov_loglik(dataset: &Dataset, model: &TwoCovModel) -> Result<f64> {
    jb_loglik(dataset, &model.0)
}

pub fn train_twocov(
    dataset: &Dataset,
    init: TwoCovModel,
    options: TrainOptions,
) -> Result<(TwoCovModel, Trace)> {
    run_em(
        init,
        options,
        |m| twocov_em_step(dataset, m),
        |m| twocov_loglik(dataset, m),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SpeakerGroup;
    use crate::em::EmMode;
    use crate::jb::jb_em_step;

    #[test]
    fn matches_jb_hand_example() {
        let g = SpeakerGroup::from_vectors("s", DMatrix::from_row_slice(1, 2, &[2.0, 0.0])).unwrap();
        let data = Dataset::new(2, vec![g]).unwrap();
        let init = JbModel::centered(SpdMatrix::identity(2), SpdMatrix::identity(2)).unwrap();
        let (jb, _) = jb_em_step(&data, &init, EmMode::Exact).unwrap();
        let (tc, _) = twocov_em_step(&data, &TwoCovModel(init)).unwrap();
        assert!((jb.s_mu().as_matrix() - tc.0.s_mu().as_matrix()).amax() < 1e-14);
        assert!((jb.s_eps().as_matrix() - tc.0.s_eps().as_matrix()).amax() < 1e-14);
    }
}
