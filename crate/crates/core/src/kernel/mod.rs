//! Differentiable building blocks with hand-written backward passes.

pub mod attention;
pub mod block;
pub mod ffn;
pub mod grad_check;
pub mod layer_norm;
pub mod linear;
pub mod loss;
pub mod multi_head;
pub mod tensor;

pub use attention::{AttentionMask, KeyScale, Weighting};
pub use block::{Block, BlockOptions, Dropout, Memory};
pub use tensor::{Parameters, Tensor};
