//! Knowledge graph, synthetic image/report corpus, tokenization, node
//! extraction, label corruption and corpus splitting.

mod graph;
mod image;
mod io;
mod labels;
mod split;
mod synth;
mod vocab;

pub use graph::{build_node_vocabulary, KnowledgeGraph, Node, NodeKind, NODE_COUNT};
pub use image::{glyph, render_image, SyntheticImage};
pub use io::{read_corpus_jsonl, write_corpus_jsonl};
pub use labels::{corrupt_labels, extract_nodes, NodeLabelVector};
pub use split::{read_manifest, split_corpus, write_manifest, CorpusSplit};
pub use synth::{
    compose_report, derive_seed, finding_prevalence, generate_corpus, generate_corpus_with, label_histogram,
    standard_vocabulary, template_lexicon, CorpusConfig, Sample,
};
pub use vocab::{normalize_text, Vocabulary, BOS, CLS, ENC, EOS, MASK_NEG, NONE, PAD, SEP, SPECIAL_TOKENS, UNK};
