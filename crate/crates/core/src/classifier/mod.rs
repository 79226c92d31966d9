//! Multi-label node classifier, long-tail metrics, and knowledge text.

mod metrics;
mod network;

pub use metrics::{average_precision, compute_multilabel_metrics, roc_auc, ClassifierMetrics};
pub use network::{ClassifierConfig, NodeClassifier};

use crate::corpus::{KnowledgeGraph, NodeLabelVector, Vocabulary, NONE, SEP, SPECIAL_TOKENS};
use crate::error::{Error, Result};

/// Bit `i` is set iff `probabilities[i] >= threshold`.
pub fn threshold_to_labels(probabilities: &[f64], threshold: f64) -> Result<NodeLabelVector> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::contract(format!("threshold {threshold} outside (0, 1)")));
    }
    if probabilities.len() != crate::corpus::NODE_COUNT {
        return Err(Error::contract(format!("expected 27 probabilities, got {}", probabilities.len())));
    }
    Ok(NodeLabelVector::from_indices((0..probabilities.len()).filter(|&i| probabilities[i] >= threshold)))
}

/// Positive node names in graph order joined by `[SEP]`, or `[NONE]`.
pub fn knowledge_text(labels: &NodeLabelVector, graph: &KnowledgeGraph) -> String {
    let names = labels.names(graph);
    if names.is_empty() {
        SPECIAL_TOKENS[NONE].to_string()
    } else {
        names.join(&format!(" {} ", SPECIAL_TOKENS[SEP]))
    }
}

/// Token ids of [`knowledge_text`].
pub fn nodes_to_knowledge_text(labels: &NodeLabelVector, graph: &KnowledgeGraph, vocab: &Vocabulary) -> Vec<usize> {
    let mut out = Vec::new();
    for name in labels.names(graph) {
        if !out.is_empty() {
            out.push(SEP);
        }
        out.extend(vocab.tokenize(name));
    }
    if out.is_empty() {
        out.push(NONE);
    }
    out
}
