//! Desk-scale multi-resolution masked-prediction encoder.
//!
//! A stack of pre-LN transformer blocks whose middle runs at lower frame
//! rates, with an optional auxiliary masked-prediction loss at each lower
//! level. Presets cover the single-resolution baseline and the ablation
//! family (extra resolution, no auxiliary loss, no downsampling). Backprop
//! is written by hand and checked against finite differences.

pub mod config;
pub mod corpus;
pub mod extract;
pub mod model;
pub mod ops;
pub mod params;
pub mod train;

pub use config::{check_comparison, load_config, parse_config, resolve_config, ConfigFile, ModelConfig, ResidualMode, PRESETS};
pub use corpus::{Corpus, CorpusOptions, Utterance};
pub use extract::extract;
pub use model::{span_mask, ForwardTrace, LayerOutput, LossBreakdown, Model, TargetStream};
pub use params::{Params, StoredParams};
pub use train::{grad_check, relative_error, train_toy, Example, GradCheck, LossHistory, TrainOptions};

#[cfg(test)]
mod tests;
