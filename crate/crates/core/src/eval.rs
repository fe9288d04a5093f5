//! Trial scoring and detection metrics: EER, minimum DCF and DET points.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dataset::{Dataset, TrialLabel, TrialList};
use crate::error::{Error, Result};
use crate::io::{create, open, parse_err};
use crate::jb::{jb_score_sd, PairScorer, SdTransform, SetScorer};
use crate::lda::LdaProjection;
use crate::plda::KaldiScorer;

/// Anything that maps an (enrollment set, test set) pair to a score. Sets are
/// `m × d` with one session per row.
pub trait Scorer: Send + Sync {
    fn score(&self, enroll: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<f64>;
}

impl Scorer for SetScorer {
    fn score(&self, enroll: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<f64> {
        SetScorer::score(self, enroll, test)
    }
}

impl Scorer for SdTransform {
    fn score(&self, enroll: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<f64> {
        jb_score_sd(
            self,
            &self.transform_vectors(enroll)?,
            &self.transform_vectors(test)?,
        )
    }
}

impl Scorer for PairScorer {
    fn score(&self, enroll: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<f64> {
        self.score_sets(enroll, test)
    }
}

impl Scorer for KaldiScorer {
    fn score(&self, enroll: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<f64> {
        KaldiScorer::score(self, enroll, test)
    }
}

impl Scorer for LdaProjection {
    fn score(&self, enroll: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<f64> {
        LdaProjection::score(self, enroll, test)
    }
}

/// Resolves trial ids against a dataset. An id is looked up, in order, as an
/// utterance id (one vector), a speaker id (all of that speaker's vectors),
/// or a `+`-joined list of utterance ids.
#[derive(Debug)]
pub struct VectorIndex<'a> {
    dataset: &'a Dataset,
    utterances: HashMap<&'a str, (usize, usize)>,
    speakers: HashMap<&'a str, usize>,
}

impl<'a> VectorIndex<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        let mut utterances = HashMap::new();
        let mut speakers = HashMap::new();
        for (s, g) in dataset.speakers().iter().enumerate() {
            speakers.insert(g.speaker_id(), s);
            for (j, u) in g.utterance_ids().iter().enumerate() {
                utterances.insert(u.as_str(), (s, j));
            }
        }
        Self {
            dataset,
            utterances,
            speakers,
        }
    }

    fn row(&self, s: usize, j: usize) -> DMatrix<f64> {
        self.dataset.speakers()[s].vectors().rows(j, 1).into_owned()
    }

    /// The vector set named by `id`, or `None` if any part is unknown.
    pub fn resolve(&self, id: &str) -> Option<DMatrix<f64>> {
        if let Some(&(s, j)) = self.utterances.get(id) {
            return Some(self.row(s, j));
        }
        if let Some(&s) = self.speakers.get(id) {
            return Some(self.dataset.speakers()[s].vectors().clone());
        }
        if !id.contains('+') {
            return None;
        }
        let parts: Vec<(usize, usize)> = id
            .split('+')
            .map(|u| self.utterances.get(u).copied())
            .collect::<Option<_>>()?;
        let d = self.dataset.dim();
        let mut out = DMatrix::zeros(parts.len(), d);
        for (k, &(s, j)) in parts.iter().enumerate() {
            out.row_mut(k)
                .copy_from(&self.dataset.speakers()[s].vectors().row(j));
        }
        Some(out)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.utterances.contains_key(id)
            || self.speakers.contains_key(id)
            || (id.contains('+') && id.split('+').all(|u| self.utterances.contains_key(u)))
    }

    fn resolve_for(&self, id: &str, line: usize) -> Result<DMatrix<f64>> {
        self.resolve(id).ok_or_else(|| Error::UnknownId {
            id: id.to_string(),
            line,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub enroll_id: String,
    pub test_id: String,
    pub score: f64,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite score for trial {} {}",
                e.enroll_id, e.test_id
            )));
        }
        Ok(Self { entries })
    }

    /// Anonymous labeled scores, mainly for metric computations.
    pub fn from_labeled(targets: &[f64], nontargets: &[f64]) -> Result<Self> {
        let entry = |k: usize, score: f64, label| ScoreEntry {
            enroll_id: format!("e{k}"),
            test_id: format!("t{k}"),
            score,
            label,
        };
        let entries = targets
            .iter()
            .map(|&s| (s, TrialLabel::Target))
            .chain(nontargets.iter().map(|&s| (s, TrialLabel::Nontarget)))
            .enumerate()
            .map(|(k, (s, l))| entry(k, s, l))
            .collect();
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.score)
    }

    fn with_label(&self, label: TrialLabel) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.label == label)
            .map(|e| e.score)
            .collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.with_label(TrialLabel::Target)
    }

    pub fn nontargets(&self) -> Vec<f64> {
        self.with_label(TrialLabel::Nontarget)
    }

    pub fn count(&self, label: TrialLabel) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    /// Copies labels from a trial list, matched by `(enroll_id, test_id)`.
    /// Entries without a matching trial keep their current label.
    pub fn attach_labels(&mut self, trials: &TrialList) {
        let lookup: HashMap<(&str, &str), TrialLabel> = trials
            .iter()
            .map(|t| ((t.enroll_id.as_str(), t.test_id.as_str()), t.label))
            .collect();
        for e in &mut self.entries {
            if let Some(&l) = lookup.get(&(e.enroll_id.as_str(), e.test_id.as_str())) {
                e.label = l;
            }
        }
    }
}

/// Scores every trial in parallel; output order matches the trial list.
/// Ids are checked up front so an unknown id is always reported for the
/// first offending trial.
pub fn run_trials<S>(scorer: &S, dataset: &Dataset, trials: &TrialList) -> Result<ScoreSet>
where
    S: Scorer + ?Sized,
{
    let index = VectorIndex::new(dataset);
    for t in trials.iter() {
        for id in [&t.enroll_id, &t.test_id] {
            if !index.contains(id) {
                return Err(Error::UnknownId {
                    id: id.clone(),
                    line: t.line,
                });
            }
        }
    }
    let entries = trials
        .trials
        .par_iter()
        .map(|t| {
            let enroll = index.resolve_for(&t.enroll_id, t.line)?;
            let test = index.resolve_for(&t.test_id, t.line)?;
            Ok(ScoreEntry {
                enroll_id: t.enroll_id.clone(),
                test_id: t.test_id.clone(),
                score: scorer.score(&enroll, &test)?,
                label: t.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreSet::new(entries)
}

/// Detection operating point for the NIST cost function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

pub const DCF08: OperatingPoint = OperatingPoint {
    p_target: 0.01,
    c_miss: 10.0,
    c_fa: 1.0,
};

pub const DCF10: OperatingPoint = OperatingPoint {
    p_target: 0.001,
    c_miss: 1.0,
    c_fa: 1.0,
};

/// One point of the DET curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub p_fa: f64,
    pub p_miss: f64,
}

fn labeled(scores: &ScoreSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let targets = scores.targets();
    if targets.is_empty() {
        return Err(Error::MissingLabels("target"));
    }
    let nontargets = scores.nontargets();
    if nontargets.is_empty() {
        return Err(Error::MissingLabels("nontarget"));
    }
    Ok((targets, nontargets))
}

/// Miss and false-alarm rates as the threshold sweeps from `−∞` to `+∞`.
///
/// The first point accepts everything, `(1, 0)`. After each distinct score
/// `v` (tied scores form a single step) a trial is rejected iff its score is
/// `≤ v`. The last point rejects everything, `(0, 1)`.
pub fn det_points(scores: &ScoreSet) -> Result<Vec<DetPoint>> {
    let (targets, nontargets) = labeled(scores)?;
    Ok(det_points_from(&targets, &nontargets))
}

fn det_points_from(targets: &[f64], nontargets: &[f64]) -> Vec<DetPoint> {
    let (nt, nn) = (targets.len() as f64, nontargets.len() as f64);
    det_counts(targets, nontargets)
        .into_iter()
        .map(|(false_alarms, misses)| DetPoint {
            p_fa: false_alarms as f64 / nn,
            p_miss: misses as f64 / nt,
        })
        .collect()
}

/// `(false alarms, misses)` at each DET step, as raw counts.
fn det_counts(targets: &[f64], nontargets: &[f64]) -> Vec<(usize, usize)> {
    let mut all: Vec<(f64, bool)> = targets
        .iter()
        .map(|&s| (s, true))
        .chain(nontargets.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut misses = 0usize;
    let mut false_alarms = nontargets.len();
    let mut counts = vec![(false_alarms, 0)];
    let mut k = 0;
    while k < all.len() {
        let v = all[k].0;
        while k < all.len() && all[k].0 == v {
            if all[k].1 {
                misses += 1;
            } else {
                false_alarms -= 1;
            }
            k += 1;
        }
        counts.push((false_alarms, misses));
    }
    counts
}

/// Where the segment `a → b` meets `p_miss = p_fa`. The expression is
/// symmetric in the endpoints and in the two axes, so mirrored curves give
/// identical results.
pub fn diagonal_crossing(a: DetPoint, b: DetPoint) -> f64 {
    let num = a.p_miss * b.p_fa - a.p_fa * b.p_miss;
    let den = (a.p_miss - a.p_fa) + (b.p_fa - b.p_miss);
    num / den
}

/// Equal error rate of the convex hull of a DET point set: the lowest point
/// of the hull on the diagonal.
pub fn eer_from_det(points: &[DetPoint]) -> f64 {
    let mut sorted: Vec<DetPoint> = points.to_vec();
    sorted.sort_by(|a, b| {
        a.p_fa
            .total_cmp(&b.p_fa)
            .then(a.p_miss.total_cmp(&b.p_miss))
    });
    sorted.dedup();
    let hull = lower_hull(sorted, |o, a, p| {
        (a.p_fa - o.p_fa) * (p.p_miss - o.p_miss) - (a.p_miss - o.p_miss) * (p.p_fa - o.p_fa)
            <= 0.0
    });
    hull_eer(&hull, |p| p.p_miss.total_cmp(&p.p_fa), |p| p)
}

/// Same as [`eer_from_det`] but with the hull built in exact integer
/// arithmetic, so mirrored curves (labels swapped, scores negated) select
/// the same segment and give bitwise-equal results.
fn eer_from_counts(counts: &[(usize, usize)], n_target: usize, n_nontarget: usize) -> f64 {
    // both axes scaled to units of 1 / (n_target * n_nontarget)
    let mut scaled: Vec<(i128, i128)> = counts
        .iter()
        .map(|&(fa, miss)| (fa as i128 * n_target as i128, miss as i128 * n_nontarget as i128))
        .collect();
    scaled.sort();
    scaled.dedup();
    let hull = lower_hull(scaled, |o, a, p| {
        (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0) <= 0
    });
    let (nt, nn) = (n_target as f64, n_nontarget as f64);
    hull_eer(
        &hull,
        |p| p.1.cmp(&p.0),
        |p| DetPoint {
            p_fa: (p.0 / n_target as i128) as f64 / nn,
            p_miss: (p.1 / n_nontarget as i128) as f64 / nt,
        },
    )
}

/// Lower convex hull by monotone chain over points sorted by x then y;
/// `drop_middle(o, a, p)` says whether `a` is on or above the chord `o → p`.
fn lower_hull<T: Copy>(sorted: Vec<T>, drop_middle: impl Fn(T, T, T) -> bool) -> Vec<T> {
    let mut hull: Vec<T> = Vec::with_capacity(sorted.len());
    for p in sorted {
        while hull.len() >= 2 && drop_middle(hull[hull.len() - 2], hull[hull.len() - 1], p) {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// First hull vertex at or below the diagonal, interpolated back to it.
fn hull_eer<T: Copy>(
    hull: &[T],
    miss_vs_fa: impl Fn(T) -> std::cmp::Ordering,
    to_det: impl Fn(T) -> DetPoint,
) -> f64 {
    use std::cmp::Ordering;
    for (k, &p) in hull.iter().enumerate() {
        match miss_vs_fa(p) {
            Ordering::Equal => return to_det(p).p_fa,
            Ordering::Less => {
                return match k {
                    0 => 0.0,
                    _ => diagonal_crossing(to_det(hull[k - 1]), to_det(p)),
                }
            }
            Ordering::Greater => {}
        }
    }
    // unreachable for curves that end at (1, 0); report the last point
    hull.last().map_or(0.0, |&p| {
        let d = to_det(p);
        d.p_fa.max(d.p_miss)
    })
}

/// Equal error rate on the ROC convex hull.
pub fn compute_eer(scores: &ScoreSet) -> Result<f64> {
    let (targets, nontargets) = labeled(scores)?;
    Ok(eer_from_counts(
        &det_counts(&targets, &nontargets),
        targets.len(),
        nontargets.len(),
    ))
}

/// Normalized minimum detection cost over all thresholds, including
/// accept-all and reject-all.
pub fn compute_min_dcf(scores: &ScoreSet, p_target: f64, c_miss: f64, c_fa: f64) -> Result<f64> {
    let op = OperatingPoint {
        p_target,
        c_miss,
        c_fa,
    };
    check_operating_point(op)?;
    Ok(min_dcf_from_det(&det_points(scores)?, op))
}

fn check_operating_point(op: OperatingPoint) -> Result<()> {
    if !(op.p_target > 0.0 && op.p_target < 1.0) {
        return Err(Error::InvalidOperatingPoint(format!(
            "p_target {} outside (0, 1)",
            op.p_target
        )));
    }
    for (name, c) in [("c_miss", op.c_miss), ("c_fa", op.c_fa)] {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidOperatingPoint(format!(
                "{name} must be positive, got {c}"
            )));
        }
    }
    Ok(())
}

fn min_dcf_from_det(points: &[DetPoint], op: OperatingPoint) -> f64 {
    let w_miss = op.c_miss * op.p_target;
    let w_fa = op.c_fa * (1.0 - op.p_target);
    let best = points
        .iter()
        .map(|p| w_miss * p.p_miss + w_fa * p.p_fa)
        .fold(f64::INFINITY, f64::min);
    best / w_miss.min(w_fa)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub min_dcf_08: f64,
    pub min_dcf_10: f64,
    pub det_points: Vec<DetPoint>,
    pub n_target: usize,
    pub n_nontarget: usize,
}

pub fn evaluate(scores: &ScoreSet) -> Result<EvalReport> {
    let points = det_points(scores)?;
    Ok(EvalReport {
        eer: compute_eer(scores)?,
        min_dcf_08: min_dcf_from_det(&points, DCF08),
        min_dcf_10: min_dcf_from_det(&points, DCF10),
        n_target: scores.count(TrialLabel::Target),
        n_nontarget: scores.count(TrialLabel::Nontarget),
        det_points: points,
    })
}

impl EvalReport {
    pub fn summary(&self) -> String {
        format!(
            "targets: {}\nnontargets: {}\neer: {}%\nmin_dcf_08: {}\nmin_dcf_10: {}\n",
            self.n_target,
            self.n_nontarget,
            fmt_g6(100.0 * self.eer),
            fmt_g6(self.min_dcf_08),
            fmt_g6(self.min_dcf_10)
        )
    }

    pub fn write_det_csv(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let mut body = String::from("p_fa,p_miss\n");
        for p in &self.det_points {
            body.push_str(&format!("{},{}\n", fmt_g6(p.p_fa), fmt_g6(p.p_miss)));
        }
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Formats like C's `%g`: 6 significant digits, trailing zeros removed,
/// scientific notation outside `[1e-4, 1e6)`.
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `enroll_id<TAB>test_id<TAB>score`. Scores are written at full
/// precision so that files round-trip exactly.
pub fn write_scores(scores: &ScoreSet, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for e in &scores.entries {
        writeln!(w, "{}\t{}\t{:?}", e.enroll_id, e.test_id, e.score)
            .map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a score file; an optional fourth column carries the label.
pub fn read_scores(path: &Path) -> Result<ScoreSet> {
    let reader = BufReader::new(open(path)?);
    let mut entries = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let (e, t, s, label) = match fields.as_slice() {
            [e, t, s] => (*e, *t, *s, TrialLabel::Unlabeled),
            [e, t, s, l] => {
                let label = TrialLabel::parse(l)
                    .ok_or_else(|| parse_err(path, lineno, format!("invalid label `{l}`")))?;
                (*e, *t, *s, label)
            }
            _ => {
                return Err(parse_err(
                    path,
                    lineno,
                    "expected `enroll_id<TAB>test_id<TAB>score`",
                ))
            }
        };
        let score: f64 = s
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid score `{s}`")))?;
        if !score.is_finite() {
            return Err(parse_err(path, lineno, "non-finite score"));
        }
        entries.push(ScoreEntry {
            enroll_id: e.to_string(),
            test_id: t.to_string(),
            score,
            label,
        });
    }
    ScoreSet::new(entries)
}
