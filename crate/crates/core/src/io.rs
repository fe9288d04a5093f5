//! On-disk formats for vectors, speaker labels and trial lists.
//!
//! Binary vector files (`GVB1`):
//!
//! ```text
//! "GVB1" | u32 d | u64 n | n × ( u16 id_len | id bytes | d × f64 )
//! ```
//!
//! all little-endian. Text vector files hold one `utt_id<TAB>v1,v2,…,vd`
//! line per vector. Labels are `utt_id<TAB>speaker_id`; trials are
//! `enroll_id<TAB>test_id<TAB>{target|nontarget|-}`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::{Dataset, Trial, TrialLabel, TrialList};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"GVB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorFormat {
    Binary,
    Text,
}

/// Vectors in file order, before grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    pub dim: usize,
    pub ids: Vec<String>,
    /// Row-major `n × dim`.
    pub values: Vec<f64>,
}

impl VectorTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a vector file, detecting the binary format by its magic bytes.
pub fn read_vectors(path: &Path) -> Result<VectorTable> {
    let mut head = [0u8; 4];
    let mut f = open(path)?;
    let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
    if n == 4 && &head == BINARY_MAGIC {
        read_vectors_binary(path)
    } else {
        read_vectors_text(path)
    }
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn exact(&mut self, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| Error::BinaryParse {
            path: path.to_path_buf(),
            offset: at,
            message: format!("reading {what}: {e}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

pub fn read_vectors_binary(path: &Path) -> Result<VectorTable> {
    let mut r = CountingReader {
        inner: BufReader::new(open(path)?),
        offset: 0,
    };
    let bad = |offset: u64, message: String| Error::BinaryParse {
        path: path.to_path_buf(),
        offset,
        message,
    };
    let mut magic = [0u8; 4];
    r.exact(&mut magic, path, "magic")?;
    if &magic != BINARY_MAGIC {
        return Err(bad(0, "missing GVB1 magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.exact(&mut b4, path, "dimension")?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.exact(&mut b8, path, "row count")?;
    let n = u64::from_le_bytes(b8) as usize;
    if dim == 0 {
        return Err(bad(4, "dimension must be positive".into()));
    }

    let mut ids = Vec::with_capacity(n.min(1 << 20));
    let mut values = Vec::with_capacity(n.saturating_mul(dim).min(1 << 24));
    let mut row = vec![0u8; 8 * dim];
    for _ in 0..n {
        let mut b2 = [0u8; 2];
        r.exact(&mut b2, path, "id length")?;
        let len = u16::from_le_bytes(b2) as usize;
        let at = r.offset;
        let mut id = vec![0u8; len];
        r.exact(&mut id, path, "utterance id")?;
        let id = String::from_utf8(id).map_err(|_| bad(at, "utterance id is not UTF-8".into()))?;
        r.exact(&mut row, path, "vector")?;
        values.extend(
            row.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))),
        );
        ids.push(id);
    }
    Ok(VectorTable { dim, ids, values })
}

pub fn read_vectors_text(path: &Path) -> Result<VectorTable> {
    let reader = BufReader::new(open(path)?);
    let mut dim = None;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno, "expected `utt_id<TAB>v1,v2,…`"))?;
        let before = values.len();
        for field in rest.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("invalid number `{field}`")))?;
            values.push(v);
        }
        let n = values.len() - before;
        match dim {
            None => dim = Some(n),
            Some(d) if d != n => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {d} values, found {n}"),
                ))
            }
            _ => {}
        }
        ids.push(id.to_string());
    }
    let dim = dim.ok_or_else(|| parse_err(path, 0, "no vectors"))?;
    Ok(VectorTable { dim, ids, values })
}

pub fn write_vectors(table: &VectorTable, path: &Path, format: VectorFormat) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    match format {
        VectorFormat::Binary => {
            w.write_all(BINARY_MAGIC).map_err(io)?;
            let dim = u32::try_from(table.dim)
                .map_err(|_| Error::InvalidArgument("dimension exceeds u32".into()))?;
            w.write_all(&dim.to_le_bytes()).map_err(io)?;
            w.write_all(&(table.len() as u64).to_le_bytes()).map_err(io)?;
            for (k, id) in table.ids.iter().enumerate() {
                let len = u16::try_from(id.len()).map_err(|_| {
                    Error::InvalidArgument(format!("utterance id `{id}` longer than 65535 bytes"))
                })?;
                w.write_all(&len.to_le_bytes()).map_err(io)?;
                w.write_all(id.as_bytes()).map_err(io)?;
                for v in table.row(k) {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
        }
        VectorFormat::Text => {
            for (k, id) in table.ids.iter().enumerate() {
                let row: Vec<String> = table.row(k).iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{id}\t{}", row.join(",")).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Reads `utt_id<TAB>speaker_id` pairs in file order.
pub fn read_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(utt), Some(spk), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(path, k + 1, "expected `utt_id<TAB>speaker_id`"));
        };
        if !seen.insert(utt.to_string()) {
            return Err(parse_err(path, k + 1, format!("duplicate utterance id `{utt}`")));
        }
        out.push((utt.to_string(), spk.to_string()));
    }
    Ok(out)
}

pub fn write_labels(pairs: &[(String, String)], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for (utt, spk) in pairs {
        writeln!(w, "{utt}\t{spk}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Joins a vector table with speaker labels into a grouped dataset.
///
/// Every label must name a vector and every vector must carry a label.
pub fn group_vectors(table: VectorTable, labels: &[(String, String)]) -> Result<Dataset> {
    let speaker_of: HashMap<&str, &str> = labels
        .iter()
        .map(|(u, s)| (u.as_str(), s.as_str()))
        .collect();
    let present: HashSet<&str> = table.ids.iter().map(String::as_str).collect();
    if let Some((missing, _)) = labels.iter().find(|(u, _)| !present.contains(u.as_str())) {
        return Err(Error::UnknownUtteranceId {
            id: missing.clone(),
        });
    }
    let mut rows = Vec::with_capacity(table.len());
    for (k, id) in table.ids.iter().enumerate() {
        let spk = speaker_of.get(id.as_str()).ok_or_else(|| {
            Error::InvalidArgument(format!("utterance `{id}` has no speaker label"))
        })?;
        rows.push((id.clone(), spk.to_string(), table.row(k).to_vec()));
    }
    Dataset::from_rows(table.dim, rows)
}

pub fn load_dataset(vectors_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let table = read_vectors(vectors_path)?;
    let labels = read_labels(labels_path)?;
    group_vectors(table, &labels)
}

/// Splits a dataset back into a vector table and label pairs (group order).
pub fn flatten(dataset: &Dataset) -> (VectorTable, Vec<(String, String)>) {
    let mut ids = Vec::with_capacity(dataset.num_vectors());
    let mut values = Vec::with_capacity(dataset.num_vectors() * dataset.dim());
    let mut labels = Vec::with_capacity(dataset.num_vectors());
    for (utt, spk, row) in dataset.rows() {
        ids.push(utt.to_string());
        values.extend(row.iter());
        labels.push((utt.to_string(), spk.to_string()));
    }
    (
        VectorTable {
            dim: dataset.dim(),
            ids,
            values,
        },
        labels,
    )
}

pub fn save_dataset(
    dataset: &Dataset,
    vectors_path: &Path,
    labels_path: &Path,
    format: VectorFormat,
) -> Result<()> {
    let (table, labels) = flatten(dataset);
    write_vectors(&table, vectors_path, format)?;
    write_labels(&labels, labels_path)
}

pub fn read_trials(path: &Path) -> Result<TrialList> {
    let reader = BufReader::new(open(path)?);
    let mut trials = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let (enroll, test, label) = match fields.as_slice() {
            [e, t] => (*e, *t, TrialLabel::Unlabeled),
            [e, t, l] => {
                let label = TrialLabel::parse(l).ok_or_else(|| {
                    parse_err(path, lineno, format!("invalid trial label `{l}`"))
                })?;
                (*e, *t, label)
            }
            _ => {
                return Err(parse_err(
                    path,
                    lineno,
                    "expected `enroll_id<TAB>test_id<TAB>{target|nontarget|-}`",
                ))
            }
        };
        trials.push(Trial {
            enroll_id: enroll.to_string(),
            test_id: test.to_string(),
            label,
            line: lineno,
        });
    }
    Ok(TrialList::new(trials))
}

pub fn write_trials(trials: &TrialList, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for t in trials.iter() {
        writeln!(w, "{}\t{}\t{}", t.enroll_id, t.test_id, t.label.as_str())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
