//! Attention blocks and the image, text and knowledge encoders.

mod config;
mod fusion;
mod layers;
mod momentum;
mod text;
mod vision;

pub use config::{ModelConfig, ShareMode};
pub use fusion::{EnhancedVisualFeatures, KnowledgeFusion};
pub use layers::{
    is_attention_role, AttentionBlock, CrossSublayer, FeedForward, LayerNormParams, Linear, NamedParams, TokenStack,
    TransformerLayer,
};
pub use momentum::momentum_update;
pub use text::{KnowledgeEncoder, KnowledgeFeatures, TextEncoder, TextFeatures, TextMode};
pub use vision::{patch_index, VisionEncoder, VisualFeatures};

#[cfg(test)]
mod tests;
