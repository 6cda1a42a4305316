//! The segmentation network, its projection head and the model file format.

mod config;
mod head;
mod io;
mod network;

pub use config::{ModelConfig, ProjectionConfig};
pub use head::{EmbeddingGrads, Embeddings, HeadGrads, ProjectionHead};
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use network::{BlockGrads, DscBlock, ForwardCache, ModelGrads, ModelMetadata, PruneMask, TinyPpg};

pub(crate) use network::{apply_mask, segment_tensor};
