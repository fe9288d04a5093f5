//! Synthetic data from the two-covariance generative model, plus dense
//! brute-force likelihood oracles.
//!
//! All randomness comes from a `ChaCha8Rng` seeded with the caller's seed.
//! Gaussian draws use `rand_distr::StandardNormal` (ziggurat sampler), so
//! output is bit-reproducible on any platform with IEEE-754 doubles.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, SpeakerGroup, Trial, TrialLabel, TrialList};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_logpdf_dense, symmetrized, SpdMatrix};

/// Largest `m·d` the dense oracle will materialize.
pub const ORACLE_SIZE_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sessions {
    Fixed(usize),
    PerSpeaker(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub dim: usize,
    pub n_speakers: usize,
    pub sessions: Sessions,
    pub mu_spectrum: Vec<f64>,
    pub eps_spectrum: Vec<f64>,
    pub seed: u64,
}

impl SynthSpec {
    /// Fixed session count with isotropic spectra.
    pub fn isotropic(dim: usize, n_speakers: usize, sessions: usize, mu: f64, eps: f64, seed: u64) -> Self {
        Self {
            dim,
            n_speakers,
            sessions: Sessions::Fixed(sessions),
            mu_spectrum: vec![mu; dim],
            eps_spectrum: vec![eps; dim],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if self.mu_spectrum.len() != self.dim || self.eps_spectrum.len() != self.dim {
            return bad(format!(
                "spectra must have {} entries (got {} and {})",
                self.dim,
                self.mu_spectrum.len(),
                self.eps_spectrum.len()
            ));
        }
        if self.mu_spectrum.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return bad("speaker spectrum must be finite and nonnegative".into());
        }
        if self.eps_spectrum.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("session spectrum must be finite and positive".into());
        }
        match &self.sessions {
            Sessions::Fixed(0) => bad("sessions per speaker must be positive".into()),
            Sessions::PerSpeaker(list) if list.len() != self.n_speakers => bad(format!(
                "{} session counts for {} speakers",
                list.len(),
                self.n_speakers
            )),
            Sessions::PerSpeaker(list) if list.contains(&0) => {
                bad("sessions per speaker must be positive".into())
            }
            _ => Ok(()),
        }
    }

    fn sessions_of(&self, speaker: usize) -> usize {
        match &self.sessions {
            Sessions::Fixed(m) => *m,
            Sessions::PerSpeaker(list) => list[speaker],
        }
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // filled row by row so the draw order is independent of storage layout
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Haar-distributed orthogonal matrix: QR of a standard normal matrix with
/// the signs of `R`'s diagonal folded into `Q`.
fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = normal_matrix(dim, dim, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..dim {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// Returns `(Q diag(s) Qᵀ, Q diag(√s))`.
fn spd_with_factor(dim: usize, spectrum: &[f64], rng: &mut ChaCha8Rng) -> (SpdMatrix, DMatrix<f64>) {
    let q = random_orthogonal(dim, rng);
    let mut factor = q.clone();
    let mut scaled = q.clone();
    for (k, &v) in spectrum.iter().enumerate() {
        factor.column_mut(k).scale_mut(v.sqrt());
        scaled.column_mut(k).scale_mut(v);
    }
    let m = symmetrized(scaled * q.transpose());
    (SpdMatrix::from_accumulator(m), factor)
}

/// `Q diag(spectrum) Qᵀ` for a seeded random orthogonal `Q`.
pub fn sample_spd(dim: usize, spectrum: &[f64], seed: u64) -> Result<SpdMatrix> {
    if spectrum.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: spectrum.len(),
        });
    }
    if spectrum.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(
            "spectrum must be finite and nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(spd_with_factor(dim, spectrum, &mut rng).0)
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    pub s_mu: SpdMatrix,
    pub s_eps: SpdMatrix,
}

/// Draws `x_ij = μ_i + ε_ij` with `μ_i ~ N(0, S_μ)` and `ε_ij ~ N(0, S_ε)`.
///
/// Speakers are named `spk<k>` and utterances `spk<k>-<j>`, zero-padded.
pub fn generate_dataset(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let d = spec.dim;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mu_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut eps_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut draw = ChaCha8Rng::seed_from_u64(master.next_u64());
    let (s_mu, mu_factor) = spd_with_factor(d, &spec.mu_spectrum, &mut mu_rng);
    let (s_eps, eps_factor) = spd_with_factor(d, &spec.eps_spectrum, &mut eps_rng);

    let width = spec.n_speakers.saturating_sub(1).to_string().len();
    let mut speakers = Vec::with_capacity(spec.n_speakers);
    for i in 0..spec.n_speakers {
        let m = spec.sessions_of(i);
        let mu = &mu_factor * normal_matrix(d, 1, &mut draw);
        let noise = normal_matrix(m, d, &mut draw) * eps_factor.transpose();
        let mut x = noise;
        for mut row in x.row_iter_mut() {
            row += mu.transpose();
        }
        let spk = format!("spk{i:0width$}");
        let uw = m.saturating_sub(1).to_string().len();
        let ids = (0..m).map(|j| format!("{spk}-{j:0uw$}")).collect();
        speakers.push(SpeakerGroup::new(spk, ids, x)?);
    }
    Ok(SynthData {
        dataset: Dataset::new(d, speakers)?,
        s_mu,
        s_eps,
    })
}

/// Random verification trials.
///
/// A target trial enrolls all but one session of a speaker (joined with `+`)
/// and tests on the held-out session. A nontarget trial enrolls the same way
/// on one speaker and tests on a session of a different speaker. Targets come
/// first, then nontargets.
pub fn generate_trials(
    dataset: &Dataset,
    n_target: usize,
    n_nontarget: usize,
    seed: u64,
) -> Result<TrialList> {
    let speakers = dataset.speakers();
    let multi: Vec<usize> = (0..speakers.len()).filter(|&s| speakers[s].len() >= 2).collect();
    if n_target > 0 && multi.is_empty() {
        return Err(Error::InsufficientSpeakers(
            "target trials need a speaker with at least two sessions".into(),
        ));
    }
    if n_nontarget > 0 && speakers.len() < 2 {
        return Err(Error::InsufficientSpeakers(
            "nontarget trials need at least two speakers".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enroll_except = |s: usize, held: usize| -> String {
        let ids = speakers[s].utterance_ids();
        if ids.len() == 1 {
            return ids[0].clone();
        }
        ids.iter()
            .enumerate()
            .filter(|&(j, _)| j != held)
            .map(|(_, u)| u.as_str())
            .collect::<Vec<_>>()
            .join("+")
    };

    let mut trials = Vec::with_capacity(n_target + n_nontarget);
    for _ in 0..n_target {
        let s = multi[rng.random_range(0..multi.len())];
        let held = rng.random_range(0..speakers[s].len());
        trials.push((
            enroll_except(s, held),
            speakers[s].utterance_ids()[held].clone(),
            TrialLabel::Target,
        ));
    }
    for _ in 0..n_nontarget {
        let a = rng.random_range(0..speakers.len());
        let mut b = rng.random_range(0..speakers.len() - 1);
        if b >= a {
            b += 1;
        }
        let held = rng.random_range(0..speakers[a].len());
        let test = rng.random_range(0..speakers[b].len());
        trials.push((
            enroll_except(a, held),
            speakers[b].utterance_ids()[test].clone(),
            TrialLabel::Nontarget,
        ));
    }
    Ok(TrialList::new(
        trials
            .into_iter()
            .enumerate()
            .map(|(k, (enroll_id, test_id, label))| Trial {
                enroll_id,
                test_id,
                label,
                line: k + 1,
            })
            .collect(),
    ))
}

/// Dense reference for the log-likelihood of an `m × d` session set: builds
/// the full `(m·d) × (m·d)` covariance with blocks `S_μ + δ_jk S_ε`.
pub fn oracle_set_loglik(x: &DMatrix<f64>, s_mu: &DMatrix<f64>, s_eps: &DMatrix<f64>) -> Result<f64> {
    let (m, d) = x.shape();
    if m == 0 {
        return Err(Error::EmptySet);
    }
    if s_mu.nrows() != d || s_eps.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: s_mu.nrows().max(s_eps.nrows()),
        });
    }
    let size = m * d;
    if size > ORACLE_SIZE_LIMIT {
        return Err(Error::SizeGuardExceeded {
            size,
            limit: ORACLE_SIZE_LIMIT,
        });
    }
    let mut sigma = DMatrix::zeros(size, size);
    for j in 0..m {
        for k in 0..m {
            let mut block = s_mu.clone();
            if j == k {
                block += s_eps;
            }
            sigma.view_mut((j * d, k * d), (d, d)).copy_from(&block);
        }
    }
    let stacked = DVector::from_iterator(size, x.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
    gaussian_logpdf_dense(&stacked, &sigma)
}

/// Dense reference for the same-vs-different log-likelihood ratio.
pub fn oracle_score(
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    s_mu: &DMatrix<f64>,
    s_eps: &DMatrix<f64>,
) -> Result<f64> {
    let mut joint = DMatrix::zeros(x1.nrows() + x2.nrows(), x1.ncols());
    joint.rows_mut(0, x1.nrows()).copy_from(x1);
    joint.rows_mut(x1.nrows(), x2.nrows()).copy_from(x2);
    Ok(oracle_set_loglik(&joint, s_mu, s_eps)?
        - oracle_set_loglik(x1, s_mu, s_eps)?
        - oracle_set_loglik(x2, s_mu, s_eps)?)
}
