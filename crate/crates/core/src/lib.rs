//! Multi-scale convolutional networks for univariate time-series
//! classification, together with the nearest-neighbour baselines they are
//! compared against.
//!
//! The pipeline for one series: cut it into overlapping windows, build the
//! identity, down-sampled and smoothed views of each window, run a
//! convolution and max-pool over every view, stack the pooled maps, apply
//! further convolutions and dense layers, and vote over the window
//! predictions.

pub mod baseline;
pub mod data;
pub mod error;
pub mod mcnn;
pub mod nn;
pub mod numerics;
pub mod train;
pub mod transform;

pub use baseline::{dtw_1nn, dtw_cv_window, dtw_distance, euclidean_1nn, DtwParams};
pub use data::{Dataset, LabelMap, LabeledSeries};
pub use error::{Error, Result};
pub use mcnn::{assemble, read_model, write_model, McnnConfig, McnnModel, Vote};
pub use nn::Activation;
pub use numerics::{FilterBank, Matrix, Signal};
pub use train::{evaluate, fit, fit_with_test, grid_search, FitReport, GridSpec, TrainConfig};
pub use transform::BranchSpec;
