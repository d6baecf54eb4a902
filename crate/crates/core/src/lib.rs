//! Decomposition-based training loss for time-series forecasting.
//!
//! The crate provides a small reverse-mode autodiff engine ([`tensor`]),
//! EMA and SMA seasonal-trend decompositions ([`decomp`]), the training
//! objectives ([`loss`]), linear backbones ([`model`]), ETT-style data
//! handling ([`data`]) and an Adam training loop ([`train`]).

pub mod data;
pub mod decomp;
pub mod error;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, Graph, Tensor};
pub use data::{RawSeries, Segment, SplitSpec, WindowedDataset};
pub use decomp::{DecompPair, SmoothingFactor};
pub use loss::{DbLossConfig, LossKind, LossReport};
pub use model::{ModelConfig, ModelKind, ModelParams};
pub use train::{EvalReport, Metrics, TrainConfig};
