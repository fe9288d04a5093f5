//! The Gaussian PLDA family used for comparison: simplified PLDA with a
//! speaker subspace, the averaged ("Kaldi-style") PLDA, and the
//! two-covariance model. They differ in the observation each EM treats as
//! data and in which latent variables are hidden.

mod kaldi;
mod splda;
mod twocov;

pub use kaldi::{
    kaldi_em_step, kaldi_loglik, kaldi_score, train_kaldi, KaldiPldaModel, KaldiScorer,
};
pub use splda::{
    splda_em_step, splda_loglik, splda_score, splda_scorer, train_splda, SpldaModel,
};
pub use twocov::{train_twocov, twocov_em_step, twocov_loglik, TwoCovModel};
