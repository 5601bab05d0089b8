//! A small differentiable speech encoder with a hand-written backward pass.
//!
//! Frontend: frame `i` covers samples `[i·stride, i·stride + kernel)`. Inside
//! the frame, `channels` learned FIR filters of `sub_kernel` taps slide with
//! step `sub_stride`; their squared outputs are averaged, log-compressed as
//! `ln(1 + E / energy_floor)` and layer-normalized into layer 0.
//!
//! Blocks (post-LN): single-head self-attention with a learned relative
//! position bias, then a GELU feed-forward layer, each wrapped in a residual
//! connection followed by layer normalization.

mod model;
mod params;
mod train;

pub use model::{backward, backward_input, backward_input_cached, forward, forward_cached, frame_count, Cache, InputGradient, LayerActivations};
pub use params::{load_params, random_params, save_params, BlockParams, EncoderConfig, EncoderParams, NULL_LABEL};
pub use train::{frame_accuracy, frame_labels, train_encoder, TrainConfig, TrainReport};
