use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Mask, ParamId, ParamStore, Tape, Var};

/// `(role, id)` pairs used for sharing checks.
pub type NamedParams = Vec<(String, ParamId)>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Linear {
            weight: store.uniform(format!("{name}.w"), [fan_in, fan_out], fan_in, rng)?,
            bias: store.zeros(format!("{name}.b"), [fan_out])?,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        x.linear(tape.param(store, self.weight), tape.param(store, self.bias))
    }

    fn named(&self, prefix: &str, out: &mut NamedParams) {
        out.push((format!("{prefix}.w"), self.weight));
        out.push((format!("{prefix}.b"), self.bias));
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gain: store.ones(format!("{name}.g"), [width])?,
            bias: store.zeros(format!("{name}.b"), [width])?,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(tape.param(store, self.gain), tape.param(store, self.bias))
    }

    fn named(&self, prefix: &str, out: &mut NamedParams) {
        out.push((format!("{prefix}.g"), self.gain));
        out.push((format!("{prefix}.b"), self.bias));
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(store, &format!("{name}.up"), width, hidden, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, width, rng)?,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.up.forward(tape, store, x)?.gelu();
        self.down.forward(tape, store, h)
    }
}

/// Multi-head scaled dot-product attention with separate query and key/value
/// inputs; self-attention passes the same tensor twice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionBlock {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub width: usize,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::config(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(AttentionBlock {
            query: Linear::new(store, &format!("{name}.q"), width, width, rng)?,
            key: Linear::new(store, &format!("{name}.k"), width, width, rng)?,
            value: Linear::new(store, &format!("{name}.v"), width, width, rng)?,
            output: Linear::new(store, &format!("{name}.o"), width, width, rng)?,
            heads,
            width,
        })
    }

    pub fn d_k(&self) -> usize {
        self.width / self.heads
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        queries: Var<'t>,
        keys_values: Var<'t>,
        mask: Option<&Mask>,
    ) -> Result<Var<'t>> {
        Ok(self.forward_with_weights(tape, store, queries, keys_values, mask)?.0)
    }

    /// Also returns the per-head attention matrices `[L_q, L_kv]`.
    pub fn forward_with_weights<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        queries: Var<'t>,
        keys_values: Var<'t>,
        mask: Option<&Mask>,
    ) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        for x in [queries, keys_values] {
            let shape = x.shape();
            if shape.len() != 2 || shape[1] != self.width {
                return Err(Error::config(format!(
                    "attention width {} does not match input {shape:?}",
                    self.width
                )));
            }
        }
        let q = self.query.forward(tape, store, queries)?;
        let k = self.key.forward(tape, store, keys_values)?;
        let v = self.value.forward(tape, store, keys_values)?;
        let dk = self.d_k();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dk..(h + 1) * dk;
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (q.slice_cols(cols.clone())?, k.slice_cols(cols.clone())?, v.slice_cols(cols)?)
            };
            let scores = qh.matmul(kh.transpose()?)?.scale(scale);
            let w = scores.softmax_rows(mask)?;
            outputs.push(w.matmul(vh)?);
            weights.push(w);
        }
        let merged = if outputs.len() == 1 {
            outputs[0]
        } else {
            Var::concat_cols(&outputs)?
        };
        Ok((self.output.forward(tape, store, merged)?, weights))
    }

    fn named(&self, prefix: &str, out: &mut NamedParams) {
        self.query.named(&format!("{prefix}.q"), out);
        self.key.named(&format!("{prefix}.k"), out);
        self.value.named(&format!("{prefix}.v"), out);
        self.output.named(&format!("{prefix}.o"), out);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossSublayer {
    pub norm: LayerNormParams,
    pub attention: AttentionBlock,
}

/// Pre-norm block: self-attention, optional cross-attention, feed-forward,
/// each wrapped as `x + f(norm(x))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformerLayer {
    pub norm_sa: LayerNormParams,
    pub self_attention: AttentionBlock,
    pub cross: Option<CrossSublayer>,
    pub norm_ff: LayerNormParams,
    pub feed_forward: FeedForward,
}

impl TransformerLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        ffn_hidden: usize,
        with_cross: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let norm_sa = LayerNormParams::new(store, &format!("{name}.ln_sa"), width)?;
        let self_attention = AttentionBlock::new(store, &format!("{name}.sa"), width, heads, rng)?;
        let cross = if with_cross {
            Some(CrossSublayer {
                norm: LayerNormParams::new(store, &format!("{name}.ln_cross"), width)?,
                attention: AttentionBlock::new(store, &format!("{name}.cross"), width, heads, rng)?,
            })
        } else {
            None
        };
        Ok(TransformerLayer {
            norm_sa,
            self_attention,
            cross,
            norm_ff: LayerNormParams::new(store, &format!("{name}.ln_ff"), width)?,
            feed_forward: FeedForward::new(store, &format!("{name}.ffn"), width, ffn_hidden, rng)?,
        })
    }

    /// `context` feeds the cross-attention sublayer and is ignored when the
    /// layer has none.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        mask: Option<&Mask>,
        context: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let h = self.norm_sa.forward(tape, store, x)?;
        let mut x = x.add(self.self_attention.forward(tape, store, h, h, mask)?)?;
        if let (Some(cross), Some(ctx)) = (&self.cross, context) {
            let h = cross.norm.forward(tape, store, x)?;
            x = x.add(cross.attention.forward(tape, store, h, ctx, None)?)?;
        }
        let h = self.norm_ff.forward(tape, store, x)?;
        x.add(self.feed_forward.forward(tape, store, h)?)
    }

    pub fn named_params(&self, prefix: &str) -> NamedParams {
        let mut out = Vec::new();
        self.norm_sa.named(&format!("{prefix}.ln_sa"), &mut out);
        self.self_attention.named(&format!("{prefix}.sa"), &mut out);
        if let Some(c) = &self.cross {
            c.norm.named(&format!("{prefix}.ln_cross"), &mut out);
            c.attention.named(&format!("{prefix}.cross"), &mut out);
        }
        self.norm_ff.named(&format!("{prefix}.ln_ff"), &mut out);
        self.feed_forward.up.named(&format!("{prefix}.ffn.up"), &mut out);
        self.feed_forward.down.named(&format!("{prefix}.ffn.down"), &mut out);
        out
    }
}

/// Token embedding, positional table and a stack of layers; shared skeleton of
/// the text encoder, knowledge encoder and decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenStack {
    pub token_embedding: ParamId,
    pub positions: ParamId,
    pub norm_embed: LayerNormParams,
    pub layers: Vec<TransformerLayer>,
    pub norm_final: LayerNormParams,
    pub max_len: usize,
}

impl TokenStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        max_len: usize,
        width: usize,
        heads: usize,
        ffn_hidden: usize,
        layers: usize,
        with_cross: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(TokenStack {
            token_embedding: store.uniform(format!("{name}.tok_embed"), [vocab_size, width], width, rng)?,
            positions: store.uniform(format!("{name}.pos"), [max_len, width], width, rng)?,
            norm_embed: LayerNormParams::new(store, &format!("{name}.ln_embed"), width)?,
            layers: (0..layers)
                .map(|i| TransformerLayer::new(store, &format!("{name}.layer{i}"), width, heads, ffn_hidden, with_cross, rng))
                .collect::<Result<_>>()?,
            norm_final: LayerNormParams::new(store, &format!("{name}.ln_final"), width)?,
            max_len,
        })
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        tokens: &[usize],
        mask: Option<&Mask>,
        context: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        if tokens.is_empty() {
            return Err(Error::contract("empty token sequence"));
        }
        if tokens.len() > self.max_len {
            return Err(Error::contract(format!(
                "{} tokens exceed the maximum length {}",
                tokens.len(),
                self.max_len
            )));
        }
        let emb = tape.param(store, self.token_embedding).select_rows(tokens)?;
        let pos = tape.param(store, self.positions).slice_rows(0..tokens.len())?;
        let mut x = self.norm_embed.forward(tape, store, emb.add(pos)?)?;
        for layer in &self.layers {
            x = layer.forward(tape, store, x, mask, context)?;
        }
        self.norm_final.forward(tape, store, x)
    }

    pub fn named_params(&self) -> NamedParams {
        let mut out = vec![
            ("tok_embed".to_string(), self.token_embedding),
            ("pos".to_string(), self.positions),
        ];
        self.norm_embed.named("ln_embed", &mut out);
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.named_params(&format!("layer{i}")));
        }
        self.norm_final.named("ln_final", &mut out);
        out
    }
}

/// True for roles that belong to an attention block (self or cross).
pub fn is_attention_role(role: &str) -> bool {
    role.contains(".sa.") || role.contains(".cross.")
}
