//! Causal report decoder with a tied output projection, plus greedy and beam
//! generation.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS, SPECIAL_TOKENS};
use crate::encoders::{
    AttentionBlock, EnhancedVisualFeatures, ModelConfig, NamedParams, ShareMode, TextEncoder, TokenStack,
};
use crate::error::{Error, Result};
use crate::tensor::{Mask, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    #[default]
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    /// Maximum number of generated tokens, not counting [BOS]/[EOS].
    pub max_len: usize,
    /// Rank finished beams by log-probability per token instead of the sum.
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { strategy: Strategy::Beam, beam_width: 3, max_len: 60, length_normalize: true }
    }
}

impl DecodeConfig {
    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Generated ids without [BOS]/[EOS].
    pub tokens: Vec<usize>,
    /// Unnormalized log-probability of the tokens (and [EOS] when emitted).
    pub log_prob: f64,
    /// True when `max_len` was reached before [EOS].
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderStack {
    pub stack: TokenStack,
    pub output_bias: ParamId,
    pub share_mode: ShareMode,
}

impl DecoderStack {
    /// Builds a decoder whose parameters alias the text encoder's according
    /// to `cfg.share_mode`.
    pub fn sharing(
        text: &TextEncoder,
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        vocab_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let stack = match cfg.share_mode {
            ShareMode::AllButSa => {
                let mut stack = text.stack.clone();
                for (i, layer) in stack.layers.iter_mut().enumerate() {
                    layer.self_attention =
                        AttentionBlock::new(store, &format!("{name}.layer{i}.sa"), cfg.width, cfg.heads, rng)?;
                }
                stack
            }
            ShareMode::SaOnly => {
                let mut stack = TokenStack::new(
                    store,
                    name,
                    vocab_size,
                    cfg.max_len,
                    cfg.width,
                    cfg.heads,
                    cfg.width * cfg.ffn_mult,
                    cfg.layers,
                    true,
                    rng,
                )?;
                for (layer, shared) in stack.layers.iter_mut().zip(&text.stack.layers) {
                    layer.self_attention = shared.self_attention.clone();
                }
                stack
            }
        };
        Ok(DecoderStack {
            stack,
            output_bias: store.zeros(format!("{name}.out_bias"), [vocab_size])?,
            share_mode: cfg.share_mode,
        })
    }

    pub fn max_positions(&self) -> usize {
        self.stack.max_len
    }

    /// Logits `[L, V]`; row `t` predicts token `t + 1`.
    pub fn forward_causal<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        tokens: &[usize],
        visual: &EnhancedVisualFeatures<'t>,
    ) -> Result<Var<'t>> {
        if tokens.first() != Some(&BOS) {
            return Err(Error::contract("decoder input must start with [BOS]"));
        }
        let mask = Mask::causal(tokens.len());
        let h = self.stack.forward(tape, store, tokens, Some(&mask), Some(visual.features))?;
        let embed = tape.param(store, self.stack.token_embedding);
        h.matmul(embed.transpose()?)?.add_bias(tape.param(store, self.output_bias))
    }

    /// Log-probabilities of the next token after `prefix`.
    fn next_log_probs(&self, store: &ParamStore, visual: &Tensor, prefix: &[usize]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let features = EnhancedVisualFeatures { features: tape.constant(visual.clone()) };
        let logits = self.forward_causal(&tape, store, prefix, &features)?;
        let last = logits.slice_rows(prefix.len() - 1..prefix.len())?.log_softmax_rows()?;
        let mut lp = last.value().into_data();
        // Reports never contain control tokens other than the terminator.
        for (id, x) in lp.iter_mut().enumerate().take(SPECIAL_TOKENS.len()) {
            if id != EOS {
                *x = f64::NEG_INFINITY;
            }
        }
        Ok(lp)
    }

    pub fn generate(&self, store: &ParamStore, visual: &Tensor, cfg: &DecodeConfig) -> Result<Generation> {
        if cfg.max_len == 0 || cfg.max_len > self.max_positions() {
            return Err(Error::contract(format!(
                "max_len {} must be in 1..={}",
                cfg.max_len,
                self.max_positions()
            )));
        }
        match cfg.strategy {
            Strategy::Greedy => self.greedy(store, visual, cfg.max_len),
            Strategy::Beam => self.beam(store, visual, cfg.beam_width.max(1), cfg.max_len, cfg.length_normalize),
        }
    }

    fn greedy(&self, store: &ParamStore, visual: &Tensor, max_len: usize) -> Result<Generation> {
        let mut prefix = vec![BOS];
        let mut log_prob = 0.0;
        while prefix.len() <= max_len {
            let lp = self.next_log_probs(store, visual, &prefix)?;
            let next = argmax(&lp);
            log_prob += lp[next];
            if next == EOS {
                return Ok(Generation { tokens: prefix[1..].to_vec(), log_prob, truncated: false });
            }
            prefix.push(next);
        }
        Ok(Generation { tokens: prefix[1..].to_vec(), log_prob, truncated: true })
    }

    /// Beam search pruned on cumulative log-probability; the final pick uses
    /// the length-normalized score when enabled. Ties go to the lexicographically smaller
    /// id sequence.
    fn beam(
        &self,
        store: &ParamStore,
        visual: &Tensor,
        width: usize,
        max_len: usize,
        length_normalize: bool,
    ) -> Result<Generation> {
        let score = |g: &Generation| if length_normalize { normalized(g) } else { g.log_prob };
        struct Hyp {
            tokens: Vec<usize>,
            log_prob: f64,
        }
        let mut alive = vec![Hyp { tokens: vec![BOS], log_prob: 0.0 }];
        let mut finished: Vec<Generation> = Vec::new();
        for _ in 0..max_len {
            let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();
            for hyp in &alive {
                let lp = self.next_log_probs(store, visual, &hyp.tokens)?;
                let mut order: Vec<usize> = (0..lp.len()).collect();
                order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
                for &tok in order.iter().take(width) {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(tok);
                    candidates.push((hyp.log_prob + lp[tok], tokens));
                }
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            alive.clear();
            for (rank, (log_prob, tokens)) in candidates.into_iter().enumerate() {
                if alive.len() >= width {
                    break;
                }
                if tokens.last() == Some(&EOS) {
                    // Only hypotheses that would have made the beam may finish.
                    if rank < width {
                        let body = tokens[1..tokens.len() - 1].to_vec();
                        finished.push(Generation { tokens: body, log_prob, truncated: false });
                    }
                } else {
                    alive.push(Hyp { tokens, log_prob });
                }
            }
            if finished.len() >= width || alive.is_empty() {
                break;
            }
        }
        let pool: Vec<Generation> = if finished.is_empty() {
            alive
                .into_iter()
                .map(|h| Generation { tokens: h.tokens[1..].to_vec(), log_prob: h.log_prob, truncated: true })
                .collect()
        } else {
            finished
        };
        pool.into_iter()
            .min_by(|a, b| match score(b).total_cmp(&score(a)) {
                Ordering::Equal => a.tokens.cmp(&b.tokens),
                o => o,
            })
            .ok_or_else(|| Error::contract("beam search produced no hypothesis"))
    }

    pub fn named_params(&self) -> NamedParams {
        let mut out = self.stack.named_params();
        out.push(("out_bias".to_string(), self.output_bias));
        out
    }
}

fn normalized(g: &Generation) -> f64 {
    let len = g.tokens.len() + usize::from(!g.truncated);
    g.log_prob / len.max(1) as f64
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
