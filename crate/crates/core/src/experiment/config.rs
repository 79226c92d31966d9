use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::corpus::CorpusConfig;
use crate::decoder::DecodeConfig;
use crate::encoders::ModelConfig;
use crate::error::{Error, Result};
use crate::nlg::CiderVariant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub n: usize,
    pub seed: u64,
    pub imbalance_exponent: f64,
    /// Read the corpus from this JSONL file instead of generating it.
    pub path: Option<PathBuf>,
    pub split: [f64; 3],
    pub image_side: usize,
    pub channels: usize,
    pub max_prevalence: f64,
    pub noise: f64,
}

impl CorpusSection {
    pub fn render(&self) -> CorpusConfig {
        CorpusConfig {
            image_side: self.image_side,
            channels: self.channels,
            max_prevalence: self.max_prevalence,
            noise: self.noise,
        }
    }
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            n: 1000,
            seed: 7,
            imbalance_exponent: 1.0,
            path: None,
            split: [0.7, 0.1, 0.2],
            image_side: 32,
            channels: 1,
            max_prevalence: 0.35,
            noise: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validate (and maybe checkpoint) every this many epochs; 0 keeps the
    /// final parameters without validating.
    pub eval_every: usize,
    /// Cap on validation samples per evaluation; 0 means the whole split.
    pub val_limit: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            lr: 1e-4,
            weight_decay: 5e-5,
            epochs: 30,
            batch_size: 16,
            seed: 1,
            eval_every: 1,
            val_limit: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    /// Output channels per conv/pool stage.
    pub stages: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            stages: ClassifierConfig::default().stages,
            lr: 1e-3,
            weight_decay: 5e-5,
            epochs: 30,
            batch_size: 16,
            seed: 1,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Node accuracies to test; 1.0 is always added.
    pub accuracies: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { accuracies: vec![0.7, 0.8, 0.9], seeds: vec![1, 2, 3] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub cider_variant: CiderVariant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub classifier: ClassifierSection,
    pub decode: DecodeConfig,
    pub sweep: SweepSection,
    pub metrics: MetricsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("runs"),
            corpus: CorpusSection::default(),
            model: ModelConfig::default(),
            training: TrainingSection::default(),
            classifier: ClassifierSection::default(),
            decode: DecodeConfig::default(),
            sweep: SweepSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Model dimensions with the image shape taken from the corpus.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { image_side: self.corpus.image_side, channels: self.corpus.channels, ..self.model.clone() }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            image_side: self.corpus.image_side,
            image_channels: self.corpus.channels,
            stages: self.classifier.stages.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let c = self.classifier_config();
        let reduction = 1usize << c.stages.len().min(16);
        if c.stages.is_empty() || c.image_side % reduction != 0 {
            return Err(Error::config(format!(
                "corpus.image_side {} must be divisible by 2^{} classifier stages",
                c.image_side,
                c.stages.len()
            )));
        }
        if self.corpus.image_side % 8 != 0 || self.corpus.image_side < 32 || self.corpus.channels == 0 {
            return Err(Error::config("corpus.image_side must be a multiple of 8 and at least 32; channels positive"));
        }
        if self.corpus.n == 0 {
            return Err(Error::config("corpus.n must be positive"));
        }
        for (name, batch) in [("training", self.training.batch_size), ("classifier", self.classifier.batch_size)] {
            if batch == 0 {
                return Err(Error::config(format!("{name}.batch_size must be positive")));
            }
        }
        for (name, lr) in [("training", self.training.lr), ("classifier", self.classifier.lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name}.lr must be positive")));
            }
        }
        if !(self.classifier.threshold > 0.0 && self.classifier.threshold < 1.0) {
            return Err(Error::config("classifier.threshold must be in (0, 1)"));
        }
        if let Some(a) = self.sweep.accuracies.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::config(format!("sweep accuracy {a} outside (0, 1]")));
        }
        if self.sweep.seeds.is_empty() {
            return Err(Error::config("sweep.seeds must not be empty"));
        }
        if self.decode.max_len == 0 || self.decode.max_len > self.model.max_len {
            return Err(Error::config(format!(
                "decode.max_len {} must be in 1..={}",
                self.decode.max_len, self.model.max_len
            )));
        }
        Ok(())
    }

    /// Requested accuracies plus 1.0, ascending, deduplicated.
    pub fn sweep_accuracies(&self) -> Vec<f64> {
        let mut acc = self.sweep.accuracies.clone();
        acc.push(1.0);
        acc.sort_by(f64::total_cmp);
        acc.dedup();
        acc
    }
}

/// Where each sample's knowledge text comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum KnowledgeSource {
    GroundTruth,
    /// Thresholded predictions of a classifier checkpoint.
    Classifier(PathBuf),
    /// Ground truth with bits flipped to the given mean accuracy.
    Corrupted(f64),
    /// Always the empty-knowledge sentinel.
    Empty,
}

impl FromStr for KnowledgeSource {
    type Err = Error;

    /// `ground_truth`, `empty`, `classifier:<path>` or `corrupted:<accuracy>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "ground_truth" => Ok(KnowledgeSource::GroundTruth),
            None if s == "empty" => Ok(KnowledgeSource::Empty),
            Some(("classifier", path)) if !path.is_empty() => Ok(KnowledgeSource::Classifier(PathBuf::from(path))),
            Some(("corrupted", acc)) => {
                let a: f64 = acc.parse().map_err(|_| Error::config(format!("bad accuracy in '{s}'")))?;
                if !(a > 0.0 && a <= 1.0) {
                    return Err(Error::config(format!("accuracy {a} outside (0, 1]")));
                }
                Ok(KnowledgeSource::Corrupted(a))
            }
            _ => Err(Error::config(format!(
                "unknown knowledge source '{s}' (expected ground_truth, empty, classifier:<path> or corrupted:<a>)"
            ))),
        }
    }
}

impl std::fmt::Display for KnowledgeSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KnowledgeSource::GroundTruth => write!(f, "ground_truth"),
            KnowledgeSource::Empty => write!(f, "empty"),
            KnowledgeSource::Classifier(p) => write!(f, "classifier:{}", p.display()),
            KnowledgeSource::Corrupted(a) => write!(f, "corrupted:{a}"),
        }
    }
}
