use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{KnowledgeGraph, NODE_COUNT};
use crate::error::{Error, Result};

/// One bit per knowledge-graph node, aligned with the graph's canonical order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct NodeLabelVector {
    bits: [bool; NODE_COUNT],
}

impl NodeLabelVector {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn ones() -> Self {
        NodeLabelVector {
            bits: [true; NODE_COUNT],
        }
    }

    pub fn from_bits(bits: [bool; NODE_COUNT]) -> Self {
        NodeLabelVector { bits }
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v = Self::zeros();
        for i in indices {
            v.bits[i] = true;
        }
        v
    }

    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>, graph: &KnowledgeGraph) -> Result<Self> {
        let mut v = Self::zeros();
        for n in names {
            let i = graph
                .index_of(n)
                .ok_or_else(|| Error::contract(format!("unknown node {n}")))?;
            v.bits[i] = true;
        }
        Ok(v)
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn bits(&self) -> &[bool; NODE_COUNT] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NODE_COUNT).filter(|&i| self.bits[i])
    }

    pub fn names<'g>(&self, graph: &'g KnowledgeGraph) -> Vec<&'g str> {
        self.indices().map(|i| graph.name(i)).collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Number of slots where the two vectors agree.
    pub fn agreement(&self, other: &Self) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a == b)
            .count()
    }
}

/// Sets bit `i` iff node `i`'s name occurs as a contiguous run of tokens.
/// Mentions are counted regardless of negation.
pub fn extract_nodes<S: AsRef<str>>(report: &[S], graph: &KnowledgeGraph) -> NodeLabelVector {
    let tokens: Vec<&str> = report.iter().map(AsRef::as_ref).collect();
    let mut out = NodeLabelVector::zeros();
    for (i, node) in graph.nodes().iter().enumerate() {
        let pattern: Vec<&str> = node.name.split(' ').collect();
        if tokens.windows(pattern.len()).any(|w| w == pattern.as_slice()) {
            out.set(i, true);
        }
    }
    out
}

/// Flips each bit independently with probability `1 - target_accuracy`.
/// A 1 -> 0 flip masks a true node, a 0 -> 1 flip adds a spurious one.
pub fn corrupt_labels(labels: &NodeLabelVector, target_accuracy: f64, seed: u64) -> Result<NodeLabelVector> {
    if !(target_accuracy > 0.0 && target_accuracy <= 1.0) {
        return Err(Error::contract(format!(
            "target accuracy must be in (0, 1], got {target_accuracy}"
        )));
    }
    let flip = 1.0 - target_accuracy;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = *labels;
    for i in 0..NODE_COUNT {
        // always draw so the stream does not depend on the label values
        let u: f64 = rng.gen();
        if u < flip {
            out.set(i, !out.get(i));
        }
    }
    Ok(out)
}
