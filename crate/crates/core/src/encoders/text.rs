use rand::Rng;

use super::config::ModelConfig;
use super::layers::{AttentionBlock, NamedParams, TokenStack};
use super::fusion::EnhancedVisualFeatures;
use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct TextFeatures<'t> {
    /// `[L, d]`.
    pub h_t: Var<'t>,
    /// Unit-norm `[1, proj_dim]` from row 0.
    pub cls_projection: Var<'t>,
}

#[derive(Clone, Copy, Debug)]
pub struct KnowledgeFeatures<'t> {
    /// `[L_k, d]`.
    pub h_k: Var<'t>,
}

#[derive(Clone, Copy, Debug)]
pub enum TextMode<'a, 't> {
    Bidirectional,
    /// Every layer also cross-attends to the given visual features.
    WithImageCross(&'a EnhancedVisualFeatures<'t>),
}

/// Bidirectional text encoder. Its layers carry cross-attention sublayers that
/// are only active in [`TextMode::WithImageCross`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextEncoder {
    pub stack: TokenStack,
    pub projection: ParamId,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, vocab_size: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.width;
        let stack = TokenStack::new(
            store,
            name,
            vocab_size,
            cfg.max_len,
            d,
            cfg.heads,
            d * cfg.ffn_mult,
            cfg.layers,
            true,
            rng,
        )?;
        Ok(TextEncoder { stack, projection: store.uniform(format!("{name}.proj"), [d, cfg.proj_dim], d, rng)? })
    }

    pub fn encode_text<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        tokens: &[usize],
        mode: TextMode<'_, 't>,
    ) -> Result<TextFeatures<'t>> {
        let context = match mode {
            TextMode::Bidirectional => None,
            TextMode::WithImageCross(v) => Some(v.features),
        };
        let h_t = self.stack.forward(tape, store, tokens, None, context)?;
        let cls_projection = h_t
            .slice_rows(0..1)?
            .matmul(tape.param(store, self.projection))?
            .l2_normalize_rows();
        Ok(TextFeatures { h_t, cls_projection })
    }

    pub fn named_params(&self) -> NamedParams {
        let mut out = self.stack.named_params();
        out.push(("proj".to_string(), self.projection));
        out
    }
}

/// Same architecture as the text encoder without cross-attention. Embeddings,
/// positions, layer norms and feed-forward weights are the text encoder's own
/// parameter ids; only the self-attention blocks are separate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeEncoder {
    pub stack: TokenStack,
}

impl KnowledgeEncoder {
    pub fn sharing(text: &TextEncoder, store: &mut ParamStore, name: &str, rng: &mut impl Rng) -> Result<Self> {
        let mut stack = text.stack.clone();
        for (i, layer) in stack.layers.iter_mut().enumerate() {
            let sa = &layer.self_attention;
            layer.self_attention = AttentionBlock::new(store, &format!("{name}.layer{i}.sa"), sa.width, sa.heads, rng)?;
            layer.cross = None;
        }
        Ok(KnowledgeEncoder { stack })
    }

    pub fn encode_knowledge<'t>(&self, tape: &'t Tape, store: &ParamStore, tokens: &[usize]) -> Result<KnowledgeFeatures<'t>> {
        Ok(KnowledgeFeatures { h_k: self.stack.forward(tape, store, tokens, None, None)? })
    }

    pub fn named_params(&self) -> NamedParams {
        self.stack.named_params()
    }
}
