//! GPT-2-class decoder-only transformer.

mod config;
mod forward;
mod weights;

pub use config::{ModelConfig, Positions, Wiring};
pub use forward::{Capture, ForwardTrace};
pub use weights::{Block, LayerNormParams, Linear, TransformerWeights};
