//! Joint Bayesian and Gaussian PLDA back-ends for fixed-dimension embedding
//! verification: EM training, likelihood-ratio scoring, and evaluation.

pub mod container;
pub mod dataset;
pub mod em;
pub mod error;
pub mod eval;
pub mod io;
pub mod jb;
pub mod lda;
pub mod linalg;
pub mod plda;
pub mod synth;

pub use container::{Model, ModelFile};
pub use dataset::{Dataset, SpeakerGroup, Trial, TrialLabel, TrialList};
pub use em::{EmMode, Trace, TrainOptions};
pub use error::{Error, Result};
pub use eval::{EvalReport, ScoreSet, Scorer};
pub use jb::JbModel;
pub use linalg::{DiagSpectrum, SpdMatrix};
