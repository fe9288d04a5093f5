//! Scoring in the simultaneously diagonalized basis.
//!
//! With `Φᵀ S_ε Φ = I` and `Φᵀ S_μ Φ = diag(κ)`, the transformed sessions
//! `y = Φᵀ x` are independent across dimensions, and each dimension of a set
//! of `m` sessions has covariance `I_m + κ 1 1ᵀ`. The set likelihood then
//! needs only scalar work per dimension.

use nalgebra::{DMatrix, DVector};

use super::JbModel;
use crate::dataset::row_sum;
use crate::error::{Error, Result};
use crate::linalg::{gen_eig_simdiag, DiagSpectrum};

/// Relative eigenvalue threshold used by [`RankPolicy::default`].
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankPolicy {
    /// Keep every dimension.
    Full,
    /// Keep exactly `s` dimensions.
    Explicit(usize),
    /// Keep dimensions whose eigenvalue exceeds this fraction of the largest.
    Threshold(f64),
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::Threshold(DEFAULT_RANK_THRESHOLD)
    }
}

impl RankPolicy {
    /// Number of entries of `magnitudes` (sorted descending) to keep.
    pub(crate) fn resolve(self, magnitudes: &[f64]) -> Result<usize> {
        let n = magnitudes.len();
        match self {
            RankPolicy::Full => Ok(n),
            RankPolicy::Explicit(s) if s > n => Err(Error::RankDeficient {
                requested: s,
                available: n,
            }),
            RankPolicy::Explicit(s) => Ok(s),
            RankPolicy::Threshold(t) => {
                let top = magnitudes.first().copied().unwrap_or(0.0);
                if top <= 0.0 {
                    return Ok(0);
                }
                Ok(magnitudes.iter().filter(|&&v| v > t * top).count())
            }
        }
    }
}

impl std::str::FromStr for RankPolicy {
    type Err = Error;

    /// `full`, `auto` (default threshold), `tol:<t>`, or an integer rank.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RankPolicy::Full),
            "auto" => Ok(RankPolicy::default()),
            _ => {
                if let Some(t) = s.strip_prefix("tol:") {
                    let t: f64 = t
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad threshold `{t}`")))?;
                    if !(0.0..1.0).contains(&t) {
                        return Err(Error::InvalidArgument(format!(
                            "threshold {t} outside [0, 1)"
                        )));
                    }
                    return Ok(RankPolicy::Threshold(t));
                }
                s.parse().map(RankPolicy::Explicit).map_err(|_| {
                    Error::InvalidArgument(format!(
                        "rank must be `full`, `auto`, `tol:<t>` or an integer, got `{s}`"
                    ))
                })
            }
        }
    }
}

/// Which end of the generalized spectrum to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SdOrdering {
    /// Largest eigenvalues of `S_ε⁻¹ S_μ` (most speaker-discriminative).
    #[default]
    SpeakerToNoise,
    /// Largest eigenvalues of `S_μ⁻¹ S_ε`, i.e. the smallest `κ`.
    NoiseToSpeaker,
}

impl std::str::FromStr for SdOrdering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speaker" | "speaker-to-noise" => Ok(SdOrdering::SpeakerToNoise),
            "noise" | "noise-to-speaker" => Ok(SdOrdering::NoiseToSpeaker),
            other => Err(Error::InvalidArgument(format!(
                "unknown SD ordering `{other}` (expected speaker|noise)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdTransform {
    /// `d × s`; sessions are mapped as `y = Φᵀ x`.
    phi: DMatrix<f64>,
    kappa: DiagSpectrum,
}

impl SdTransform {
    pub fn rank(&self) -> usize {
        self.kappa.len()
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn kappa(&self) -> &DiagSpectrum {
        &self.kappa
    }

    /// Maps an `m × d` row set to `m × s`.
    pub fn transform_vectors(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        Ok(x * &self.phi)
    }
}

pub fn make_sd_transform(
    model: &JbModel,
    policy: RankPolicy,
    ordering: SdOrdering,
) -> Result<SdTransform> {
    let (phi, kappa) = gen_eig_simdiag(model.s_mu(), model.s_eps())?;
    let d = kappa.len();
    let keep: Vec<usize> = match ordering {
        SdOrdering::SpeakerToNoise => {
            let s = policy.resolve(kappa.values())?;
            (0..s).collect()
        }
        SdOrdering::NoiseToSpeaker => {
            // rank the reciprocal spectrum; zero κ counts as infinite
            let recip: Vec<f64> = kappa
                .values()
                .iter()
                .rev()
                .map(|&k| if k > 0.0 { 1.0 / k } else { f64::INFINITY })
                .collect();
            let s = match policy {
                RankPolicy::Threshold(_) => {
                    let finite: Vec<f64> = recip.iter().copied().filter(|v| v.is_finite()).collect();
                    recip.len() - finite.len() + policy.resolve(&finite)?
                }
                _ => policy.resolve(&recip)?,
            };
            let mut idx: Vec<usize> = ((d - s)..d).collect();
            idx.sort_unstable();
            idx
        }
    };
    let mut sub = DMatrix::zeros(phi.nrows(), keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        sub.set_column(dst, &phi.column(src));
    }
    let values = keep.iter().map(|&k| kappa.values()[k]).collect();
    Ok(SdTransform {
        phi: sub,
        kappa: DiagSpectrum::new(values)?,
    })
}

/// Per-dimension log-likelihood ratio contributions, summed.
///
/// For a set of `m` transformed sessions with per-dimension sum `S`, the
/// log-density (dropping terms that cancel in the ratio) is
/// `−½[log(1 + mκ) − κ S² / (1 + mκ)]`.
pub fn jb_score_sd(transform: &SdTransform, y1: &DMatrix<f64>, y2: &DMatrix<f64>) -> Result<f64> {
    let s = transform.rank();
    for y in [y1, y2] {
        if y.nrows() == 0 {
            return Err(Error::EmptySet);
        }
        if y.ncols() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                found: y.ncols(),
            });
        }
    }
    let (a, b) = super::canonical_pair(y1, y2);
    let (m1, m2) = (a.nrows() as f64, b.nrows() as f64);
    let m12 = m1 + m2;
    let sum1: DVector<f64> = row_sum(a);
    let sum2: DVector<f64> = row_sum(b);
    let mut llr = 0.0;
    for (k, &kappa) in transform.kappa.values().iter().enumerate() {
        if kappa == 0.0 {
            continue;
        }
        let (s1, s2) = (sum1[k], sum2[k]);
        let s12 = s1 + s2;
        let log_term = (m1 * kappa).ln_1p() + (m2 * kappa).ln_1p() - (m12 * kappa).ln_1p();
        let quad = kappa * s12 * s12 / (1.0 + m12 * kappa)
            - kappa * s1 * s1 / (1.0 + m1 * kappa)
            - kappa * s2 * s2 / (1.0 + m2 * kappa);
        llr += 0.5 * (log_term + quad);
    }
    Ok(llr)
}
