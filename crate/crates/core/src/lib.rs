//! Tiny-PPG: a small 1-D fully convolutional network that marks motion
//! artifacts in photoplethysmogram signals sample by sample.
//!
//! - [`data`]: raw ingest, band-pass filtering, segmentation, the TPPG
//!   dataset format and a synthetic generator.
//! - [`nn`]: channel-major tensors, layers with hand-written backward passes, Adam.
//! - [`model`]: the network, its optional projection head and the TPML model file.
//! - [`loss`]: cross-entropy, anchor sampling, memory bank and the contrastive term.
//! - [`train`]: the training loop, splits, metrics and embedding export.
//! - [`prune`]: batch-norm scale ranking, channel masking and compaction.
//! - [`runtime`]: static memory planning and arena-bound streaming inference.

pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod nn;
pub mod prune;
pub mod runtime;
pub mod train;

pub use data::{RawRecording, SignalSegment};
pub use error::{Error, Result};
pub use loss::{ContrastStrategy, LossConfig};
pub use model::{ModelConfig, TinyPpg};
pub use runtime::{MemoryPlan, StreamStats};
pub use train::{EvalReport, TrainConfig};
