//! Segment-wise performance prediction for recurrent (ConvLSTM-style) video
//! segmentation networks.
//!
//! The pipeline turns per-frame softmax outputs and per-block mean cell
//! states into segment features, links segments over time, and trains meta
//! models that either classify `IoU_adj = 0` vs `IoU_adj > 0` or regress
//! `IoU_adj` directly:
//!
//! 1. [`tensor_io`]: on-disk frame tensors, stream manifests, label smoothing.
//! 2. [`heatmaps`]: entropy / variation ratio / probability margin and
//!    cell-state stability heatmaps.
//! 3. [`segmentation`]: 8-connected components with inner/boundary split.
//! 4. [`seg_metrics`]: segment aggregates, the canonical feature vector and
//!    the adjusted IoU target.
//! 5. [`tracking`]: overlap/center based track id assignment.
//! 6. [`dataset`]: time-series records, splits and standardization.
//! 7. [`meta_models`]: linear, gradient boosting, shallow NN and shallow LSTM.
//! 8. [`evaluation`]: ACC, AUROC, σ, R², baselines and the experiment grid.
//! 9. [`synth`]: deterministic synthetic streams for testing the whole chain.
//!
//! [`pipeline`] glues the stages together for the command line tool.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod heatmaps;
pub mod meta_models;
pub mod pipeline;
pub mod seg_metrics;
pub mod segmentation;
pub mod synth;
pub mod tensor_io;
pub mod tracking;

pub use error::{Error, Result};
