//! Dense `f64` matrices, a reverse-mode tape, the attention/GAT/layer-norm
//! layers used by the question generator, and Adam.

mod error;
pub mod gradcheck;
pub mod layers;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_gradient, relative_error};
pub use layers::{
    gat_layer, gat_layer_with_attention, multi_head_attention, AttentionParams, FeedForwardParams,
    GatLayerParams, LayerNormParams,
};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{glorot_uniform, ParamId, ParamStore};
pub use tape::{masked_softmax_rows, Gradients, Mask, Tape, Var};
pub use tensor::Tensor;
