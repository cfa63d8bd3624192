//! Attention-gated convolutional networks for sentence classification, with
//! the tooling to study their hyperparameter sensitivity.
//!
//! * [`autodiff`]: float64 tensors and a reverse-mode tape.
//! * [`model`]: the network, its training loop and checkpoint format.
//! * [`data`]: text cleaning, vocabularies, vector files, fold plans.
//! * [`sweep`]: presets, cross-validated trials, sweeps and reports.

pub mod autodiff;
pub mod data;
pub mod model;
pub mod sweep;
