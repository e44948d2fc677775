//! Pre-norm ViT encoder: weight loading, forward pass with attention and
//! activation capture, and mean ablation of individual heads.

mod config;
mod forward;
mod means;
mod model;

pub use config::ViTConfig;
pub use forward::{
    embed, forward, preprocess, AttentionRecord, Capture, ForwardOptions, ForwardOutput, HeadAblationSpec,
};
pub use means::{compute_head_means, dataset_fingerprint, HeadMeanStore};
pub use model::{init_untrained, tensor_specs, InitKind, ViTModel, FORMAT_KEY, FORMAT_VALUE};
