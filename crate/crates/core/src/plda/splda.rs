use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Dataset, SpeakerGroup};
use crate::em::{ordered_reduce, run_em, Trace, TrainOptions};
use crate::error::{Error, Result};
use crate::jb::{BlockGaussian, JbModel, SetScorer, INIT_RIDGE};
use crate::linalg::{psd_sqrt_factor, symmetric_eigen_desc, SpdFactor, SpdMatrix};

/// Simplified PLDA: `x_ij = F z_i + ε_ij`, `z_i ~ N(0, I_r)`, `ε_ij ~ N(0, Λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpldaModel {
    mean: DVector<f64>,
    loading: DMatrix<f64>,
    lambda: SpdMatrix,
}

impl SpldaModel {
    pub fn new(mean: DVector<f64>, loading: DMatrix<f64>, lambda: SpdMatrix) -> Result<Self> {
        let d = lambda.dim();
        if loading.nrows() != d || mean.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: if loading.nrows() != d {
                    loading.nrows()
                } else {
                    mean.len()
                },
            });
        }
        if loading.ncols() > d {
            return Err(Error::RankDeficient {
                requested: loading.ncols(),
                available: d,
            });
        }
        Ok(Self {
            mean,
            loading,
            lambda,
        })
    }

    /// PCA initialization: `F` spans the top `r` principal directions of the
    /// total covariance `T`, scaled by the square roots of their eigenvalues;
    /// `Λ = T − F Fᵀ + 1e-6 (tr T / d) I`.
    pub fn initialize(dataset: &Dataset, subspace_dim: usize) -> Result<Self> {
        let d = dataset.dim();
        if subspace_dim == 0 || subspace_dim > d {
            return Err(Error::RankDeficient {
                requested: subspace_dim,
                available: d,
            });
        }
        let total = dataset.total_covariance()?;
        let ridge = INIT_RIDGE * total.trace() / d as f64;
        let (values, vectors) = symmetric_eigen_desc(total.clone());
        let mut loading = vectors.columns(0, subspace_dim).into_owned();
        for (k, v) in values.iter().take(subspace_dim).enumerate() {
            loading.column_mut(k).scale_mut(v.max(0.0).sqrt());
        }
        let lambda = &total - &loading * loading.transpose() + DMatrix::identity(d, d) * ridge;
        Self::new(
            dataset.global_mean().clone(),
            loading,
            SpdMatrix::from_accumulator(lambda),
        )
    }

    /// Full-rank model with `F Fᵀ = S_μ` and `Λ = S_ε`.
    pub fn from_covariances(mean: DVector<f64>, s_mu: &SpdMatrix, s_eps: SpdMatrix) -> Result<Self> {
        Self::new(mean, psd_sqrt_factor(s_mu), s_eps)
    }

    pub fn dim(&self) -> usize {
        self.lambda.dim()
    }

    pub fn subspace_dim(&self) -> usize {
        self.loading.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn loading(&self) -> &DMatrix<f64> {
        &self.loading
    }

    pub fn lambda(&self) -> &SpdMatrix {
        &self.lambda
    }

    /// Between-speaker covariance `F Fᵀ`.
    pub fn between(&self) -> SpdMatrix {
        SpdMatrix::from_accumulator(&self.loading * self.loading.transpose())
    }

    /// Equivalent two-covariance model `(F Fᵀ, Λ)`.
    pub fn as_jb(&self) -> Result<JbModel> {
        JbModel::new(self.mean.clone(), self.between(), self.lambda.clone())
    }

    /// Whether `F` has full column rank at relative tolerance `1e-10`.
    pub fn has_full_column_rank(&self) -> bool {
        let gram = self.loading.transpose() * &self.loading;
        let (values, _) = symmetric_eigen_desc(gram);
        let top = values.first().copied().unwrap_or(0.0);
        top > 0.0 && values.iter().all(|&v| v.max(0.0).sqrt() > 1e-10 * top.sqrt())
    }
}

/// Marginal log-likelihood with `z` integrated out (covariance blocks
/// `F Fᵀ + Λ` / `F Fᵀ`).
pub fn splda_loglik(dataset: &Dataset, model: &SpldaModel) -> Result<f64> {
    crate::jb::jb_loglik(dataset, &model.as_jb()?)
}

struct SpldaAccumulator {
    loglik: f64,
    /// `Σ_i s_i E[z_i]ᵀ`
    cross: DMatrix<f64>,
    /// `Σ_i m_i E[z_i] E[z_i]ᵀ`
    latent: DMatrix<f64>,
    /// `Σ_ij x_ij x_ijᵀ`
    scatter: DMatrix<f64>,
}

impl SpldaAccumulator {
    fn new(d: usize, r: usize) -> Self {
        Self {
            loglik: 0.0,
            cross: DMatrix::zeros(d, r),
            latent: DMatrix::zeros(r, r),
            scatter: DMatrix::zeros(d, d),
        }
    }

    fn merge(&mut self, other: Self) {
        self.loglik += other.loglik;
        self.cross += other.cross;
        self.latent += other.latent;
        self.scatter += other.scatter;
    }
}

/// One EM iteration over the hidden speaker factors `z_i`.
///
/// E-step: `Π_i = I + m_i FᵀΛ⁻¹F`, `E[z_i] = Π_i⁻¹ FᵀΛ⁻¹ s_i`,
/// `E[z_i z_iᵀ] = Π_i⁻¹ + E[z_i] E[z_i]ᵀ`. M-step:
/// `F' = (Σ_i s_i E[z_i]ᵀ)(Σ_i m_i E[z_i z_iᵀ])⁻¹`,
/// `Λ' = (1/M) Σ_ij (x_ij x_ijᵀ − F' E[z_i] x_ijᵀ)`.
pub fn splda_em_step(dataset: &Dataset, model: &SpldaModel) -> Result<(SpldaModel, f64)> {
    let d = model.dim();
    let r = model.subspace_dim();
    if dataset.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: dataset.dim(),
        });
    }
    dataset.require_nonempty()?;

    let gauss = BlockGaussian::new(&model.between(), model.lambda())?;
    let lambda = gauss.eps_factor();
    let lambda_inv_f = lambda.solve(&model.loading);
    let precision_unit = model.loading.transpose() * &lambda_inv_f;

    let mut factors: BTreeMap<usize, (SpdFactor, DMatrix<f64>)> = BTreeMap::new();
    for g in dataset.speakers() {
        let m = g.len();
        if let std::collections::btree_map::Entry::Vacant(e) = factors.entry(m) {
            let precision = DMatrix::identity(r, r) + &precision_unit * m as f64;
            let f = SpdFactor::new(&precision, "SPLDA posterior precision")?;
            let cov = f.inverse();
            e.insert((f, cov));
        }
    }
    let sessions = gauss.factors_for(factors.keys().copied())?;

    let acc = ordered_reduce(
        dataset.speakers(),
        || SpldaAccumulator::new(d, r),
        |acc, g: &SpeakerGroup| {
            let m = g.len();
            let (precision, cov) = &factors[&m];
            acc.loglik += gauss.set_loglik_with(&sessions[&m], g.vectors());
            let s = g.sum();
            let ez = precision.solve_vec(&lambda_inv_f.tr_mul(&s));
            acc.cross += &s * ez.transpose();
            acc.latent += (cov + &ez * ez.transpose()) * m as f64;
            acc.scatter += g.vectors().transpose() * g.vectors();
            Ok(())
        },
        SpldaAccumulator::merge,
    )?;

    let latent = SpdFactor::new(&acc.latent, "SPLDA latent accumulator")
        .map_err(|_| Error::SingularAccumulator)?;
    let loading = latent.solve(&acc.cross.transpose()).transpose();
    let n = dataset.num_vectors() as f64;
    let lambda_next = (&acc.scatter - &loading * acc.cross.transpose()) / n;
    let next = SpldaModel::new(
        model.mean.clone(),
        loading,
        SpdMatrix::from_accumulator(lambda_next),
    )?;
    Ok((next, acc.loglik))
}

pub fn train_splda(
    dataset: &Dataset,
    init: SpldaModel,
    options: TrainOptions,
) -> Result<(SpldaModel, Trace)> {
    run_em(
        init,
        options,
        |m| splda_em_step(dataset, m),
        |m| splda_loglik(dataset, m),
    )
}

/// Same-vs-different log-likelihood ratio under `(F Fᵀ, Λ)`.
pub fn splda_score(x1: &DMatrix<f64>, x2: &DMatrix<f64>, model: &SpldaModel) -> Result<f64> {
    splda_scorer(model)?.score(x1, x2)
}

pub fn splda_scorer(model: &SpldaModel) -> Result<SetScorer> {
    Ok(SetScorer::new(BlockGaussian::new(&model.between(), model.lambda())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_dim(f: f64, lambda: f64) -> SpldaModel {
        SpldaModel::new(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, f),
            SpdMatrix::from_diagonal(&[lambda]),
        )
        .unwrap()
    }

    fn single(x: f64) -> Dataset {
        let g = SpeakerGroup::from_vectors("s", DMatrix::from_element(1, 1, x)).unwrap();
        Dataset::new(1, vec![g]).unwrap()
    }

    #[test]
    fn step_hand_example() {
        let (next, _) = splda_em_step(&single(2.0), &one_dim(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(next.loading()[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(next.lambda()[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn small_noise_stalls() {
        let model = one_dim(1.0, 1e-8);
        let (next, _) = splda_em_step(&single(2.0), &model).unwrap();
        let change = (next.loading() - model.loading()).norm() / model.loading().norm();
        assert!(change <= 1e-3, "relative change {change}");
    }

    #[test]
    fn score_reduces_to_jb_example() {
        let zero = DMatrix::zeros(1, 1);
        assert_abs_diff_eq!(
            splda_score(&zero, &zero, &one_dim(1.0, 1.0)).unwrap(),
            0.143841,
            epsilon = 1e-6
        );
        let x = DMatrix::from_element(1, 1, 3.0);
        assert_eq!(splda_score(&x, &x, &one_dim(0.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn initialization_is_valid() {
        let rows = (0..30).map(|k| {
            let t = k as f64;
            (
                format!("u{k}"),
                format!("s{}", k % 5),
                vec![t.sin(), (2.0 * t).cos(), 0.3 * t.sin() + 0.1, (0.7 * t).cos()],
            )
        });
        let data = Dataset::from_rows(4, rows).unwrap().center();
        let m = SpldaModel::initialize(&data, 2).unwrap();
        assert_eq!(m.subspace_dim(), 2);
        assert!(m.has_full_column_rank());
        assert!(SpdFactor::new(m.lambda(), "test").is_ok());
        assert!(SpldaModel::initialize(&data, 5).is_err());
    }
}
