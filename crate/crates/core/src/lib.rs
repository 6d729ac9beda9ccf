//! Numerical core for attention-based 1D CNN activity recognition on weakly
//! labeled sensor sequences.
//!
//! Everything here is `no_std` + `alloc`: tensors and reverse-mode autodiff,
//! the layer kernels, the attention head, compatibility-density
//! localization, Adam, dataset containers and the synthetic generator. File
//! formats, timing and the command line live in the companion `attnhar`
//! crate.

#![no_std]

extern crate alloc;

pub mod attention;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod localization;
pub mod model;
pub mod ops;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use attention::{AttentionParams, CompatMode, CompatibilityProfile, NormMode};
pub use data::{ChannelStats, DatasetMeta, SequenceDataset};
pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use localization::{DensityCurve, Interval, LocalizationResult};
pub use model::{build_fundamental_cnn, LayerSpec, Model, ModelSpec};
pub use optim::{AdamConfig, AdamState};
pub use synth::SynthConfig;
pub use tensor::Tensor;
pub use train::{TrainConfig, TrainHistory};
