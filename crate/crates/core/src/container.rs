//! Model files: a short text header followed by raw little-endian `f64`
//! payloads.
//!
//! ```text
//! format: jb-model v1
//! dim: 8
//! length_norm: false
//! field: mean 8 1
//! field: s_mu 8 8
//! field: s_eps 8 8
//! end
//! <payloads, row-major, in header order>
//! ```

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::jb::JbModel;
use crate::lda::LdaProjection;
use crate::linalg::{DiagSpectrum, SpdMatrix};
use crate::plda::{KaldiPldaModel, SpldaModel, TwoCovModel};

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Jb(JbModel),
    Splda(SpldaModel),
    Kaldi(KaldiPldaModel),
    TwoCov(TwoCovModel),
    Lda(LdaProjection),
}

impl Model {
    pub fn format_name(&self) -> &'static str {
        match self {
            Model::Jb(_) => "jb-model",
            Model::Splda(_) => "splda-model",
            Model::Kaldi(_) => "kaldi-plda-model",
            Model::TwoCov(_) => "twocov-model",
            Model::Lda(_) => "lda-projection",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Jb(m) => m.dim(),
            Model::Splda(m) => m.dim(),
            Model::Kaldi(m) => m.dim(),
            Model::TwoCov(m) => m.0.dim(),
            Model::Lda(m) => m.dim_in(),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        match self {
            Model::Jb(m) => m.mean(),
            Model::Splda(m) => m.mean(),
            Model::Kaldi(m) => m.mean(),
            Model::TwoCov(m) => m.0.mean(),
            Model::Lda(m) => m.mean(),
        }
    }

    fn fields(&self) -> Vec<(&'static str, DMatrix<f64>)> {
        let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        match self {
            Model::Jb(m) | Model::TwoCov(TwoCovModel(m)) => vec![
                ("mean", col(m.mean())),
                ("s_mu", m.s_mu().as_matrix().clone()),
                ("s_eps", m.s_eps().as_matrix().clone()),
            ],
            Model::Splda(m) => vec![
                ("mean", col(m.mean())),
                ("loading", m.loading().clone()),
                ("lambda", m.lambda().as_matrix().clone()),
            ],
            Model::Kaldi(m) => vec![
                ("mean", col(m.mean())),
                ("gamma", m.gamma().as_matrix().clone()),
                ("lambda", m.lambda().as_matrix().clone()),
            ],
            Model::Lda(m) => vec![
                ("mean", col(m.mean())),
                ("w", m.w().clone()),
                (
                    "eigenvalues",
                    DMatrix::from_column_slice(m.dim_out(), 1, m.eigenvalues().values()),
                ),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Model,
    /// Whether vectors are length-normalized (after mean subtraction) before
    /// training and scoring.
    pub length_norm: bool,
}

impl ModelFile {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            length_norm: false,
        }
    }

    /// Applies the model's input pipeline: subtract its mean, then
    /// length-normalize if the model was trained that way.
    pub fn prepare(&self, dataset: &Dataset) -> Result<Dataset> {
        let centered = dataset.subtract_mean(self.model.mean())?;
        if self.length_norm {
            centered.length_normalize()
        } else {
            Ok(centered)
        }
    }
}

pub fn to_bytes(file: &ModelFile) -> Vec<u8> {
    let fields = file.model.fields();
    let mut header = format!(
        "format: {} v1\ndim: {}\nlength_norm: {}\n",
        file.model.format_name(),
        file.model.dim(),
        file.length_norm
    );
    for (name, m) in &fields {
        header.push_str(&format!("field: {name} {} {}\n", m.nrows(), m.ncols()));
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    for (_, m) in &fields {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    out
}

pub fn save_model(file: &ModelFile, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(file)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelFile> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
    };

    let format = next_line()?
        .strip_prefix("format: ")
        .ok_or_else(|| bad("missing `format:` line"))?
        .to_string();
    let kind = format
        .strip_suffix(" v1")
        .ok_or_else(|| bad(format!("unsupported format version `{format}`")))?
        .to_string();
    let dim: usize = next_line()?
        .strip_prefix("dim: ")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| bad("missing or invalid `dim:` line"))?;

    let mut length_norm = false;
    let mut shapes: Vec<(String, usize, usize)> = Vec::new();
    loop {
        let line = next_line()?;
        if line == "end" {
            break;
        }
        if let Some(v) = line.strip_prefix("length_norm: ") {
            length_norm = v
                .parse()
                .map_err(|_| bad(format!("invalid length_norm `{v}`")))?;
        } else if let Some(spec) = line.strip_prefix("field: ") {
            let parts: Vec<&str> = spec.split(' ').collect();
            let [name, r, c] = parts.as_slice() else {
                return Err(bad(format!("invalid field line `{line}`")));
            };
            let r: usize = r.parse().map_err(|_| bad(format!("invalid rows in `{line}`")))?;
            let c: usize = c.parse().map_err(|_| bad(format!("invalid cols in `{line}`")))?;
            shapes.push((name.to_string(), r, c));
        } else {
            return Err(bad(format!("unexpected header line `{line}`")));
        }
    }

    let mut payload = &bytes[pos..];
    let mut fields = Vec::with_capacity(shapes.len());
    for (name, r, c) in shapes {
        let need = r * c * 8;
        if payload.len() < need {
            return Err(bad(format!("payload for `{name}` is truncated")));
        }
        let (head, tail) = payload.split_at(need);
        let values: Vec<f64> = head
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        fields.push((name, DMatrix::from_row_slice(r, c, &values)));
        payload = tail;
    }
    if !payload.is_empty() {
        return Err(bad(format!("{} trailing bytes after payload", payload.len())));
    }

    let mut take = |name: &str, rows: usize, cols: Option<usize>| -> Result<DMatrix<f64>> {
        let k = fields
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| bad(format!("missing field `{name}`")))?;
        let m = fields.swap_remove(k).1;
        if m.nrows() != rows || cols.is_some_and(|c| m.ncols() != c) {
            return Err(bad(format!(
                "field `{name}` has shape {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m)
    };
    let mean = DVector::from_column_slice(take("mean", dim, Some(1))?.as_slice());
    let model = match kind.as_str() {
        "jb-model" | "twocov-model" => {
            let s_mu = SpdMatrix::new(take("s_mu", dim, Some(dim))?)?;
            let s_eps = SpdMatrix::new(take("s_eps", dim, Some(dim))?)?;
            let m = JbModel::new(mean, s_mu, s_eps)?;
            if kind == "jb-model" {
                Model::Jb(m)
            } else {
                Model::TwoCov(TwoCovModel(m))
            }
        }
        "splda-model" => {
            let loading = take("loading", dim, None)?;
            let lambda = SpdMatrix::new(take("lambda", dim, Some(dim))?)?;
            Model::Splda(SpldaModel::new(mean, loading, lambda)?)
        }
        "kaldi-plda-model" => {
            let gamma = SpdMatrix::new(take("gamma", dim, Some(dim))?)?;
            let lambda = SpdMatrix::new(take("lambda", dim, Some(dim))?)?;
            Model::Kaldi(KaldiPldaModel::new(mean, gamma, lambda)?)
        }
        "lda-projection" => {
            let w = take("w", dim, None)?;
            let p = w.ncols();
            let eig = take("eigenvalues", p, Some(1))?;
            Model::Lda(LdaProjection::new(
                mean,
                w,
                DiagSpectrum::new(eig.as_slice().to_vec())?,
            )?)
        }
        other => return Err(bad(format!("unknown model format `{other}`"))),
    };
    Ok(ModelFile { model, length_norm })
}
