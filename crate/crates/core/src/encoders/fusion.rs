use rand::Rng;

use super::layers::{AttentionBlock, LayerNormParams, NamedParams};
use super::text::KnowledgeFeatures;
use super::vision::VisualFeatures;
use crate::error::Result;
use crate::tensor::{ParamStore, Tape, Var};

/// Visual features after knowledge fusion, same shape as `f_I`.
#[derive(Clone, Copy, Debug)]
pub struct EnhancedVisualFeatures<'t> {
    pub features: Var<'t>,
}

/// `LN(f_I + attn(Q = f_I, K = V = h_K))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeFusion {
    pub attention: AttentionBlock,
    pub norm: LayerNormParams,
}

impl KnowledgeFusion {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(KnowledgeFusion {
            attention: AttentionBlock::new(store, &format!("{name}.attn"), width, heads, rng)?,
            norm: LayerNormParams::new(store, &format!("{name}.ln"), width)?,
        })
    }

    pub fn fuse<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        visual: &VisualFeatures<'t>,
        knowledge: &KnowledgeFeatures<'t>,
    ) -> Result<EnhancedVisualFeatures<'t>> {
        Ok(EnhancedVisualFeatures { features: self.fuse_raw(tape, store, visual.f_i, knowledge.h_k)? })
    }

    pub fn fuse_raw<'t>(&self, tape: &'t Tape, store: &ParamStore, f_i: Var<'t>, h_k: Var<'t>) -> Result<Var<'t>> {
        let attended = self.attention.forward(tape, store, f_i, h_k, None)?;
        self.norm.forward(tape, store, f_i.add(attended)?)
    }

    pub fn named_params(&self) -> NamedParams {
        let mut out = Vec::new();
        let a = &self.attention;
        for (role, l) in [("q", &a.query), ("k", &a.key), ("v", &a.value), ("o", &a.output)] {
            out.push((format!("attn.{role}.w"), l.weight));
            out.push((format!("attn.{role}.b"), l.bias));
        }
        out.push(("ln.g".to_string(), self.norm.gain));
        out.push(("ln.b".to_string(), self.norm.bias));
        out
    }
}
