use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, KnowledgeSource};
use crate::classifier::{nodes_to_knowledge_text, threshold_to_labels, NodeClassifier};
use crate::corpus::{
    build_node_vocabulary, corrupt_labels, derive_seed, generate_corpus_with, read_corpus_jsonl, split_corpus,
    standard_vocabulary, CorpusSplit, KnowledgeGraph, NodeLabelVector, Sample, Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::Example;
use crate::tensor::{load_checkpoint, ParamStore};

/// Salt mixed into the training seed for per-sample knowledge corruption.
const CORRUPTION_SALT: u64 = 0x6b6e_6f77_6c65_6467;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split '{s}' (train, val or test)"))),
        }
    }
}

/// A corpus with its split, graph and vocabulary.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: KnowledgeGraph,
    pub vocab: Vocabulary,
    pub samples: Vec<Sample>,
    pub split: CorpusSplit,
}

impl Dataset {
    /// Reads `corpus.path` when set, otherwise generates the corpus.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let graph = build_node_vocabulary();
        let samples = match &cfg.corpus.path {
            Some(path) => read_corpus_jsonl(path, &graph)?,
            None => generate_corpus_with(
                &cfg.corpus.render(),
                &graph,
                cfg.corpus.n,
                cfg.corpus.seed,
                cfg.corpus.imbalance_exponent,
            )?,
        };
        Self::new(graph, samples, cfg.corpus.split, cfg.corpus.seed)
    }

    pub fn new(graph: KnowledgeGraph, samples: Vec<Sample>, ratios: [f64; 3], seed: u64) -> Result<Self> {
        let split = split_corpus(samples.len(), ratios, seed)?;
        let vocab = standard_vocabulary(&graph);
        Ok(Dataset { graph, vocab, samples, split })
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.split.train,
            Split::Val => &self.split.val,
            Split::Test => &self.split.test,
        }
    }

    pub fn report_tokens(&self, index: usize) -> Vec<usize> {
        self.vocab.tokenize(&self.samples[index].report)
    }

    pub fn examples(&self, indices: &[usize], knowledge: &[NodeLabelVector]) -> Vec<Example> {
        indices
            .iter()
            .zip(knowledge)
            .map(|(&i, labels)| Example {
                image: self.samples[i].image.clone(),
                report: self.report_tokens(i),
                knowledge: nodes_to_knowledge_text(labels, &self.graph, &self.vocab),
            })
            .collect()
    }
}

pub fn load_classifier(cfg: &ExperimentConfig, path: &Path) -> Result<(NodeClassifier, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clf = NodeClassifier::new(&mut store, "classifier", &cfg.classifier_config(), &mut rng)?;
    store.load_values_from(&load_checkpoint(path)?)?;
    Ok((clf, store))
}

/// Knowledge labels for `indices` under `source`. Corruption is keyed by
/// sample index and `seed`, so a sample keeps the same noisy labels for the
/// whole run.
pub fn resolve_knowledge(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    indices: &[usize],
    source: &KnowledgeSource,
    seed: u64,
) -> Result<Vec<NodeLabelVector>> {
    match source {
        KnowledgeSource::GroundTruth => Ok(indices.iter().map(|&i| ds.samples[i].node_labels).collect()),
        KnowledgeSource::Empty => Ok(vec![NodeLabelVector::zeros(); indices.len()]),
        KnowledgeSource::Corrupted(a) => indices
            .iter()
            .map(|&i| corrupt_labels(&ds.samples[i].node_labels, *a, derive_seed(seed ^ CORRUPTION_SALT, i as u64)))
            .collect(),
        KnowledgeSource::Classifier(path) => {
            let (clf, store) = load_classifier(cfg, path)?;
            indices
                .iter()
                .map(|&i| {
                    let p = clf.classify_nodes(&store, &ds.samples[i].image)?;
                    threshold_to_labels(&p, cfg.classifier.threshold)
                })
                .collect()
        }
    }
}
