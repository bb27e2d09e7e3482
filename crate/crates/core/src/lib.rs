//! Stochastic attention over discrete gaze grids.
//!
//! A trainable implementation of gaze-guided action recognition with a
//! latent attention map: a gaze head predicts a distribution over a coarse
//! spatial grid, training draws Gumbel-Softmax samples from it to pool
//! per-cell features, and a KL term ties the distribution to noisy gaze
//! priors. Includes evaluation metrics, a planted-signal synthetic
//! benchmark with baselines, and file formats for datasets and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod grid;
pub mod learning;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod prior;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
pub use grid::{GridDist, GridShape, LogitGrid};
pub use learning::{LossBreakdown, TrainConfig};
pub use metrics::MetricsReport;
pub use model::{ClipSample, ModelDims, ModelParams};
pub use prior::{GazeKind, GazeRecord, PriorConfig};
