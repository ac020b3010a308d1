//! Minimal neural-network kernel: tensors, parameters, a reverse-mode tape,
//! layers, optimizers and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod ste;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader};
pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use graph::{AttentionMask, Graph, Var};
pub use layers::{
    causal_mask, Conv1d, Embedding, FeedForward, LayerSpec, Linear, MultiHeadAttention, RmsNorm, TransformerBlock,
};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Grads, ParamId, ParamStore, Parameter};
pub use schedule::{MultiStep, WarmupCosine};
pub use ste::ste_quantize;
pub use tensor::Tensor;
