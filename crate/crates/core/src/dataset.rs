//! Labeled vector collections grouped by speaker, plus trial lists.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

/// All sessions of one speaker, one vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerGroup {
    speaker_id: String,
    utterance_ids: Vec<String>,
    vectors: DMatrix<f64>,
}

impl SpeakerGroup {
    pub fn new(
        speaker_id: impl Into<String>,
        utterance_ids: Vec<String>,
        vectors: DMatrix<f64>,
    ) -> Result<Self> {
        if vectors.nrows() == 0 {
            return Err(Error::EmptySet);
        }
        if utterance_ids.len() != vectors.nrows() {
            return Err(Error::DimensionMismatch {
                expected: vectors.nrows(),
                found: utterance_ids.len(),
            });
        }
        Ok(Self {
            speaker_id: speaker_id.into(),
            utterance_ids,
            vectors,
        })
    }

    /// Builds a group with generated utterance ids `<speaker>-<index>`.
    pub fn from_vectors(speaker_id: impl Into<String>, vectors: DMatrix<f64>) -> Result<Self> {
        let speaker_id = speaker_id.into();
        let ids = (0..vectors.nrows())
            .map(|j| format!("{speaker_id}-{j}"))
            .collect();
        Self::new(speaker_id, ids, vectors)
    }

    pub fn speaker_id(&self) -> &str {
        &self.speaker_id
    }

    pub fn utterance_ids(&self) -> &[String] {
        &self.utterance_ids
    }

    /// `m × d`, one session per row.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    /// Column sum `s_i = Σ_j x_ij`.
    pub fn sum(&self) -> DVector<f64> {
        row_sum(&self.vectors)
    }

    fn with_vectors(&self, vectors: DMatrix<f64>) -> Self {
        Self {
            speaker_id: self.speaker_id.clone(),
            utterance_ids: self.utterance_ids.clone(),
            vectors,
        }
    }
}

pub(crate) fn row_sum(rows: &DMatrix<f64>) -> DVector<f64> {
    let mut s = DVector::zeros(rows.ncols());
    for row in rows.row_iter() {
        s += row.transpose();
    }
    s
}

/// Fixed-dimension vectors grouped by speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    speakers: Vec<SpeakerGroup>,
    global_mean: DVector<f64>,
}

impl Dataset {
    pub fn new(dim: usize, speakers: Vec<SpeakerGroup>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let mut seen = HashMap::with_capacity(speakers.len());
        for (k, group) in speakers.iter().enumerate() {
            if group.vectors.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: group.vectors.ncols(),
                });
            }
            if seen.insert(group.speaker_id.as_str(), k).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate speaker id `{}`",
                    group.speaker_id
                )));
            }
        }
        Ok(Self {
            dim,
            speakers,
            global_mean: DVector::zeros(dim),
        })
    }

    /// Groups `(utterance, speaker, vector)` rows by speaker. Speakers appear
    /// in order of first occurrence; rows keep their order within a group.
    pub fn from_rows<I>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, Vec<f64>)>,
    {
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, (Vec<String>, Vec<f64>)> = HashMap::new();
        for (utt, spk, values) in rows {
            if values.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: values.len(),
                });
            }
            let entry = groups.entry(spk.clone()).or_insert_with(|| {
                order.push(spk);
                (Vec::new(), Vec::new())
            });
            entry.0.push(utt);
            entry.1.extend_from_slice(&values);
        }
        let speakers = order
            .into_iter()
            .map(|spk| {
                let (ids, flat) = groups.remove(&spk).expect("group recorded in order");
                let m = ids.len();
                SpeakerGroup::new(spk, ids, DMatrix::from_row_slice(m, dim, &flat))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, speakers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn speakers(&self) -> &[SpeakerGroup] {
        &self.speakers
    }

    /// Mean subtracted so far by [`Dataset::center`] / [`Dataset::subtract_mean`].
    pub fn global_mean(&self) -> &DVector<f64> {
        &self.global_mean
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn num_vectors(&self) -> usize {
        self.speakers.iter().map(SpeakerGroup::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_vectors() == 0
    }

    /// Iterates `(utterance_id, speaker_id, row)` in group order.
    pub fn rows(&self) -> impl Iterator<Item = (&str, &str, RowDVector<f64>)> + '_ {
        self.speakers.iter().flat_map(|g| {
            g.utterance_ids
                .iter()
                .zip(g.vectors.row_iter())
                .map(move |(u, r)| (u.as_str(), g.speaker_id.as_str(), r.into_owned()))
        })
    }

    /// Mean over all vectors (not over speaker means).
    pub fn vector_mean(&self) -> DVector<f64> {
        let mut sum = DVector::zeros(self.dim);
        for g in &self.speakers {
            sum += g.sum();
        }
        let n = self.num_vectors().max(1) as f64;
        sum / n
    }

    /// Subtracts the global vector mean. The subtracted amount accumulates in
    /// `global_mean`, so centering twice records the same offset.
    pub fn center(&self) -> Dataset {
        let mean = self.vector_mean();
        self.shift(&mean)
    }

    /// Subtracts a given mean (e.g. a trained model's) from every vector.
    pub fn subtract_mean(&self, mean: &DVector<f64>) -> Result<Dataset> {
        if mean.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: mean.len(),
            });
        }
        Ok(self.shift(mean))
    }

    fn shift(&self, mean: &DVector<f64>) -> Dataset {
        let row = mean.transpose();
        let speakers = self
            .speakers
            .iter()
            .map(|g| {
                let mut v = g.vectors.clone();
                for mut r in v.row_iter_mut() {
                    r -= &row;
                }
                g.with_vectors(v)
            })
            .collect();
        Dataset {
            dim: self.dim,
            speakers,
            global_mean: &self.global_mean + mean,
        }
    }

    /// Scales every vector to unit Euclidean norm.
    pub fn length_normalize(&self) -> Result<Dataset> {
        let speakers = self
            .speakers
            .iter()
            .map(|g| {
                let mut v = g.vectors.clone();
                for mut r in v.row_iter_mut() {
                    let norm = r.norm();
                    if norm == 0.0 {
                        return Err(Error::ZeroVector);
                    }
                    r /= norm;
                }
                Ok(g.with_vectors(v))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            dim: self.dim,
            speakers,
            global_mean: self.global_mean.clone(),
        })
    }

    /// `(1/M) Σ_ij x_ij x_ijᵀ`, the second moment about the origin.
    pub fn total_covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.num_vectors();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for g in &self.speakers {
            acc += g.vectors.transpose() * &g.vectors;
        }
        Ok(acc / n as f64)
    }

    pub(crate) fn require_nonempty(&self) -> Result<()> {
        if self.speakers.is_empty() {
            Err(Error::EmptyDataset)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrialLabel {
    Target,
    Nontarget,
    Unlabeled,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
            TrialLabel::Unlabeled => "-",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "target" => Some(TrialLabel::Target),
            "nontarget" => Some(TrialLabel::Nontarget),
            "-" => Some(TrialLabel::Unlabeled),
            _ => None,
        }
    }
}

/// One enrollment-vs-test pairing. Ids are speaker ids, utterance ids, or
/// `+`-joined utterance lists (see [`crate::eval::VectorIndex`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: TrialLabel,
    /// 1-based source line, when loaded from a file.
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn new(trials: Vec<Trial>) -> Self {
        Self { trials }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trial> {
        self.trials.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn two_point() -> Dataset {
        Dataset::from_rows(
            2,
            vec![
                ("a".into(), "s".into(), vec![1.0, 1.0]),
                ("b".into(), "s".into(), vec![3.0, 3.0]),
            ],
        )
        .unwrap()
    }

    fn random_dataset(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(3.0, 2.0).unwrap();
        let rows = (0..60).map(|k| {
            let v: Vec<f64> = (0..5).map(|_| normal.sample(&mut rng)).collect();
            (format!("u{k}"), format!("s{}", k % 7), v)
        });
        Dataset::from_rows(5, rows).unwrap()
    }

    #[test]
    fn center_two_points() {
        let c = two_point().center();
        assert_eq!(c.global_mean().as_slice(), &[2.0, 2.0]);
        let v = c.speakers()[0].vectors();
        assert_eq!(v.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, -1.0]);
        assert_eq!(v.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
    }

    #[test]
    fn center_is_idempotent() {
        let once = random_dataset(1).center();
        let twice = once.center();
        assert!(once.vector_mean().amax() <= 1e-12);
        for (a, b) in once.speakers().iter().zip(twice.speakers()) {
            assert!((a.vectors() - b.vectors()).amax() <= 1e-12);
        }
        assert!((once.global_mean() - twice.global_mean()).amax() <= 1e-12);
    }

    #[test]
    fn length_normalize_unit_norms() {
        let d = Dataset::from_rows(2, vec![("a".into(), "s".into(), vec![3.0, 4.0])]).unwrap();
        let n = d.length_normalize().unwrap();
        let row = n.speakers()[0].vectors().row(0).into_owned();
        assert!((row[0] - 0.6).abs() < 1e-15 && (row[1] - 0.8).abs() < 1e-15);
        let again = n.length_normalize().unwrap();
        assert_eq!(again, n);

        let r = random_dataset(2).length_normalize().unwrap();
        for (_, _, row) in r.rows() {
            assert!((row.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_vector_rejected() {
        let d = Dataset::from_rows(2, vec![("a".into(), "s".into(), vec![0.0, 0.0])]).unwrap();
        assert!(matches!(d.length_normalize(), Err(Error::ZeroVector)));
    }

    #[test]
    fn grouping_preserves_rows() {
        let d = random_dataset(3);
        assert_eq!(d.num_vectors(), 60);
        assert_eq!(d.num_speakers(), 7);
        // speaker s0 holds rows 0, 7, 14, ... in order
        let ids = d.speakers()[0].utterance_ids();
        assert_eq!(&ids[..3], &["u0", "u7", "u14"]);
    }

    #[test]
    fn duplicate_speaker_rejected() {
        let g = SpeakerGroup::from_vectors("s", DMatrix::zeros(1, 2)).unwrap();
        assert!(Dataset::new(2, vec![g.clone(), g]).is_err());
    }
}
