use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{build_node_vocabulary, KnowledgeGraph};
use super::image::{render_image, SyntheticImage};
use super::labels::{extract_nodes, NodeLabelVector};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Organs that get a normal-structure sentence when they have no findings.
const DESCRIBED_WHEN_CLEAR: [(&str, &str); 3] = [
    ("lung", "the lung is clear ."),
    ("pleural", "the pleural space is clear ."),
    ("heart", "the heart size is within limits ."),
];
const NO_FINDINGS: &str = "normal study .";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub image_side: usize,
    pub channels: usize,
    /// Prevalence of the most common finding.
    pub max_prevalence: f64,
    pub noise: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            image_side: 32,
            channels: 1,
            max_prevalence: 0.35,
            noise: 0.05,
        }
    }
}

/// One corpus row.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: SyntheticImage,
    /// Lowercase, single-spaced report text.
    pub report: String,
    pub node_labels: NodeLabelVector,
}

impl Sample {
    pub fn report_words(&self) -> Vec<&str> {
        self.report.split_whitespace().collect()
    }
}

/// Mixes a base seed with an index so sample `i` is reproducible on its own.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(index))
}

/// Probability that the finding at prevalence rank `rank` (0 = most common)
/// appears in a report.
pub fn finding_prevalence(rank: usize, max_prevalence: f64, exponent: f64) -> f64 {
    max_prevalence * ((rank + 1) as f64).powf(-exponent)
}

/// Report text for a set of findings: one sentence per organ with findings,
/// normal-structure sentences for the always-described organs, and a
/// no-findings sentence when nothing is present.
pub fn compose_report(findings: &[usize], graph: &KnowledgeGraph) -> String {
    let mut sentences: Vec<String> = Vec::new();
    if findings.is_empty() {
        sentences.push(NO_FINDINGS.to_string());
    }
    for organ in graph.organs() {
        let present: Vec<&str> = graph
            .findings_of(organ)
            .into_iter()
            .filter(|f| findings.contains(f))
            .map(|f| graph.name(f))
            .collect();
        let organ_name = graph.name(organ);
        if !present.is_empty() {
            sentences.push(format!("the {organ_name} shows {} .", present.join(" and ")));
        } else if let Some((_, clear)) = DESCRIBED_WHEN_CLEAR.iter().find(|(o, _)| *o == organ_name) {
            sentences.push(clear.to_string());
        }
    }
    sentences.join(" ")
}

/// Every word the report templates and the knowledge text can produce.
pub fn template_lexicon(graph: &KnowledgeGraph) -> Vec<String> {
    let mut words: Vec<String> = graph.names().map(str::to_string).collect();
    words.extend(["the", "shows", "and", "."].iter().map(|s| s.to_string()));
    words.extend(DESCRIBED_WHEN_CLEAR.iter().map(|(_, s)| s.to_string()));
    words.push(NO_FINDINGS.to_string());
    words
}

pub fn standard_vocabulary(graph: &KnowledgeGraph) -> Vocabulary {
    Vocabulary::from_lexicon(template_lexicon(graph))
}

pub fn generate_corpus(n: usize, seed: u64, imbalance_exponent: f64) -> Result<Vec<Sample>> {
    generate_corpus_with(&CorpusConfig::default(), &build_node_vocabulary(), n, seed, imbalance_exponent)
}

/// Draws each finding independently with power-law prevalence, renders the
/// image, writes the report, and derives labels from the report text.
pub fn generate_corpus_with(
    cfg: &CorpusConfig,
    graph: &KnowledgeGraph,
    n: usize,
    seed: u64,
    imbalance_exponent: f64,
) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::contract("corpus size must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.max_prevalence) || !imbalance_exponent.is_finite() {
        return Err(Error::config("prevalence must be in [0, 1] and exponent finite"));
    }
    let ranked = graph.findings();
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let findings: Vec<usize> = ranked
                .iter()
                .enumerate()
                .filter(|(rank, _)| {
                    rng.gen::<f64>() < finding_prevalence(*rank, cfg.max_prevalence, imbalance_exponent)
                })
                .map(|(_, &f)| f)
                .collect();
            let image = render_image(&findings, graph, cfg.image_side, cfg.channels, cfg.noise, &mut rng)?;
            let report = compose_report(&findings, graph);
            let words: Vec<&str> = report.split_whitespace().collect();
            let node_labels = extract_nodes(&words, graph);
            Ok(Sample {
                id: format!("s{i:05}"),
                image,
                report,
                node_labels,
            })
        })
        .collect()
}

/// Positive count per node over a corpus.
pub fn label_histogram(samples: &[Sample]) -> Vec<usize> {
    let mut counts = vec![0; super::graph::NODE_COUNT];
    for s in samples {
        for i in s.node_labels.indices() {
            counts[i] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::UNK;

    #[test]
    fn no_findings_report() {
        let g = build_node_vocabulary();
        assert_eq!(
            compose_report(&[], &g),
            "normal study . the lung is clear . the pleural space is clear . the heart size is within limits ."
        );
    }

    #[test]
    fn findings_grouped_by_organ_in_graph_order() {
        let g = build_node_vocabulary();
        let f = |n| g.index_of(n).unwrap();
        let r = compose_report(&[f("pneumonia"), f("effusion"), f("opacity")], &g);
        assert_eq!(
            r,
            "the lung shows opacity and pneumonia . the pleural shows effusion . the heart size is within limits ."
        );
    }

    #[test]
    fn longest_report_fits_positional_table() {
        let g = build_node_vocabulary();
        let r = compose_report(&g.findings(), &g);
        // plus [BOS] or [CLS] on input and [EOS] on target
        assert!(r.split_whitespace().count() + 1 <= 64, "{}", r.split_whitespace().count());
    }

    #[test]
    fn lexicon_covers_every_generated_word() {
        let g = build_node_vocabulary();
        let v = standard_vocabulary(&g);
        for s in generate_corpus(200, 3, 0.0).unwrap() {
            assert!(!v.tokenize(&s.report).contains(&UNK), "{}", s.report);
        }
    }

    #[test]
    fn labels_match_report_mentions() {
        let g = build_node_vocabulary();
        for s in generate_corpus(300, 11, 1.5).unwrap() {
            assert_eq!(extract_nodes(&s.report_words(), &g), s.node_labels);
            let planted: Vec<&str> = s.image.planted_findings().iter().map(String::as_str).collect();
            let finding_bits: Vec<&str> = s
                .node_labels
                .indices()
                .filter(|&i| g.organ_of(i).is_some())
                .map(|i| g.name(i))
                .collect();
            assert_eq!(planted, finding_bits);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(generate_corpus(20, 5, 1.5).unwrap(), generate_corpus(20, 5, 1.5).unwrap());
        assert_ne!(generate_corpus(20, 5, 1.5).unwrap(), generate_corpus(20, 6, 1.5).unwrap());
    }

    #[test]
    fn samples_are_seed_partitioned() {
        // sample i does not depend on how many samples come before or after it
        let small = generate_corpus(5, 9, 1.5).unwrap();
        let large = generate_corpus(40, 9, 1.5).unwrap();
        assert_eq!(small[..], large[..5]);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(generate_corpus(0, 1, 1.5).is_err());
    }
}
