use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, KnowledgeSource};
use super::data::{resolve_knowledge, Dataset, Split};
use super::evaluate::generate_split;
use super::report::{ensure_dir, write_csv};
use crate::classifier::{compute_multilabel_metrics, ClassifierMetrics, NodeClassifier};
use crate::corpus::NODE_COUNT;
use crate::error::{Error, Result};
use crate::model::{Example, GeneratorTrainer, ReportModel};
use crate::nlg::corpus_bleu;
use crate::objectives::{bce_loss, LossBreakdown};
use crate::tensor::{save_checkpoint, AdamW, AdamWConfig, ParamStore, Tape, Tensor, Var};

pub const CLASSIFIER_CHECKPOINT: &str = "classifier.ckpt";
pub const GENERATOR_CHECKPOINT: &str = "generator.ckpt";

/// Fixed offset so the classifier and generator never share an RNG stream.
const CLASSIFIER_INIT_SALT: u64 = 0x636c_6173;

fn adamw(lr: f64, weight_decay: f64) -> AdamWConfig {
    AdamWConfig { lr, weight_decay, ..AdamWConfig::default() }
}

fn shuffled_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

#[derive(Clone, Debug)]
pub struct ClassifierRun {
    pub classifier: NodeClassifier,
    pub store: ParamStore,
    /// Validation metrics of the saved checkpoint.
    pub metrics: ClassifierMetrics,
    /// Per-bit accuracy on validation at the saved checkpoint.
    pub val_bit_accuracy: f64,
    pub checkpoint: PathBuf,
}

/// Node probabilities and ground truth for a split.
pub fn classifier_predictions(
    clf: &NodeClassifier,
    store: &ParamStore,
    ds: &Dataset,
    indices: &[usize],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<bool>>)> {
    let mut probs = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        probs.push(clf.classify_nodes(store, &ds.samples[i].image)?);
        labels.push(ds.samples[i].node_labels.bits().to_vec());
    }
    Ok((probs, labels))
}

fn bit_accuracy(probs: &[Vec<f64>], labels: &[Vec<bool>], threshold: f64) -> f64 {
    let total = probs.len() * NODE_COUNT;
    let hits: usize = probs
        .iter()
        .zip(labels)
        .map(|(p, l)| p.iter().zip(l).filter(|(p, l)| (**p >= threshold) == **l).count())
        .sum();
    hits as f64 / total.max(1) as f64
}

/// Trains the node classifier with BCE and keeps the parameters with the best
/// validation aF1. Writes `classifier.ckpt` and `classifier_metrics.csv`.
pub fn train_classifier(cfg: &ExperimentConfig, ds: &Dataset, out: &Path) -> Result<ClassifierRun> {
    ensure_dir(out)?;
    let c = &cfg.classifier;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ CLASSIFIER_INIT_SALT);
    let mut store = ParamStore::new();
    let clf = NodeClassifier::new(&mut store, "classifier", &cfg.classifier_config(), &mut rng)?;
    let mut opt = AdamW::new(adamw(c.lr, c.weight_decay), &store);
    let train = ds.indices(Split::Train);
    let val = ds.indices(Split::Val);
    if train.is_empty() || val.len() < 2 {
        return Err(Error::contract("classifier training needs a train split and at least two validation samples"));
    }

    let mut rows = Vec::new();
    let mut best: Option<(f64, ParamStore, ClassifierMetrics, f64)> = None;
    for epoch in 1..=c.epochs {
        let mut loss_sum = 0.0;
        let batches = shuffled_batches(train.len(), c.batch_size, &mut rng);
        for batch in &batches {
            store.zero_grads();
            let tape = Tape::new();
            let mut probs = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len() * NODE_COUNT);
            for &b in batch {
                let sample = &ds.samples[train[b]];
                probs.push(clf.forward(&tape, &store, tape.constant(sample.image.to_tensor()))?);
                targets.extend(sample.node_labels.as_f64());
            }
            let labels = Tensor::new([batch.len(), NODE_COUNT], targets)?;
            let loss = bce_loss(Var::concat_rows(&probs)?, &labels)?;
            loss_sum += loss.item();
            loss.backward()?;
            store.accumulate_grads(&tape);
            opt.step(&mut store);
        }
        let train_loss = loss_sum / batches.len() as f64;
        let (probs, labels) = classifier_predictions(&clf, &store, ds, val)?;
        let metrics = compute_multilabel_metrics(&probs, &labels)?;
        let acc = bit_accuracy(&probs, &labels, c.threshold);
        info!("classifier epoch {epoch}: loss {train_loss:.4} val aF1 {:.4} aACC {:.4}", metrics.a_f1, metrics.a_acc);
        rows.push(vec![
            epoch.to_string(),
            train_loss.to_string(),
            metrics.a_auc.to_string(),
            metrics.a_f1.to_string(),
            metrics.a_acc.to_string(),
            metrics.m_ap.to_string(),
            acc.to_string(),
        ]);
        if best.as_ref().map_or(true, |b| metrics.a_f1 > b.0) {
            best = Some((metrics.a_f1, store.clone(), metrics, acc));
        }
    }
    write_csv(
        &out.join("classifier_metrics.csv"),
        &["epoch", "train_loss", "val_a_auc", "val_a_f1", "val_a_acc", "val_m_ap", "val_bit_accuracy"],
        &rows,
    )?;
    let (store, metrics, val_bit_accuracy) = match best {
        Some((_, s, m, a)) => (s, m, a),
        None => {
            let (probs, labels) = classifier_predictions(&clf, &store, ds, val)?;
            let acc = bit_accuracy(&probs, &labels, c.threshold);
            (store, compute_multilabel_metrics(&probs, &labels)?, acc)
        }
    };
    let checkpoint = out.join(CLASSIFIER_CHECKPOINT);
    save_checkpoint(&store, &checkpoint)?;
    Ok(ClassifierRun { classifier: clf, store, metrics, val_bit_accuracy, checkpoint })
}

#[derive(Clone, Debug)]
pub struct GeneratorRun {
    pub model: ReportModel,
    pub store: ParamStore,
    /// Best validation BLEU-4, if validation ran.
    pub best_val_bleu4: Option<f64>,
    /// Loss breakdown of the last step.
    pub last: LossBreakdown,
    pub checkpoint: PathBuf,
}

/// Builds the training examples for a knowledge source.
pub fn split_examples(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    indices: &[usize],
    source: &KnowledgeSource,
) -> Result<Vec<Example>> {
    let knowledge = resolve_knowledge(cfg, ds, indices, source, cfg.training.seed)?;
    Ok(ds.examples(indices, &knowledge))
}

/// Trains the report generator on the train split. With `eval_every > 0` the
/// parameters with the best validation BLEU-4 are kept; otherwise the final
/// ones. Writes `generator.ckpt`, `train_log.csv`, `val_log.csv` and the
/// resolved `config.toml`.
pub fn train_generator(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    source: &KnowledgeSource,
    out: &Path,
) -> Result<GeneratorRun> {
    ensure_dir(out)?;
    cfg.save(&out.join("config.toml"))?;
    let t = &cfg.training;
    let train = split_examples(cfg, ds, ds.indices(Split::Train), source)?;
    if train.is_empty() {
        return Err(Error::contract("empty training split"));
    }
    let val_indices = ds.indices(Split::Val);
    let val_indices = if t.val_limit > 0 { &val_indices[..t.val_limit.min(val_indices.len())] } else { val_indices };
    let val = if t.eval_every > 0 { split_examples(cfg, ds, val_indices, source)? } else { Vec::new() };

    let (model, store) = ReportModel::new(&cfg.model_config(), ds.vocab.len(), t.seed)?;
    let opt = AdamW::new(adamw(t.lr, t.weight_decay), &store);
    let mut trainer = GeneratorTrainer::new(model, store, opt, t.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);

    let mut train_rows = Vec::new();
    let mut val_rows = Vec::new();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut last = LossBreakdown::default();
    let mut step = 0usize;
    for epoch in 1..=t.epochs {
        for batch in shuffled_batches(train.len(), t.batch_size, &mut rng) {
            let items: Vec<Example> = batch.iter().map(|&i| train[i].clone()).collect();
            last = trainer.step(&items)?;
            step += 1;
            train_rows.push(vec![
                step.to_string(),
                last.l_itc.to_string(),
                last.l_itm.to_string(),
                last.l_lm.to_string(),
                last.total.to_string(),
                trainer.temperature().to_string(),
            ]);
        }
        info!("generator epoch {epoch}: total {:.4} lm {:.4}", last.total, last.l_lm);
        if t.eval_every > 0 && (epoch % t.eval_every == 0 || epoch == t.epochs) && !val.is_empty() {
            let bleu4 = validation_bleu4(cfg, &trainer.model, &trainer.store, &val)?;
            info!("generator epoch {epoch}: val BLEU-4 {bleu4:.4}");
            val_rows.push(vec![epoch.to_string(), bleu4.to_string()]);
            if best.as_ref().map_or(true, |b| bleu4 > b.0) {
                best = Some((bleu4, trainer.store.clone()));
            }
        }
    }
    write_csv(&out.join("train_log.csv"), &["step", "l_itc", "l_itm", "l_lm", "total", "tau"], &train_rows)?;
    write_csv(&out.join("val_log.csv"), &["epoch", "bleu4"], &val_rows)?;
    let (best_val_bleu4, store) = match best {
        Some((b, s)) => (Some(b), s),
        None => (None, trainer.store),
    };
    let checkpoint = out.join(GENERATOR_CHECKPOINT);
    save_checkpoint(&store, &checkpoint)?;
    Ok(GeneratorRun { model: trainer.model, store, best_val_bleu4, last, checkpoint })
}

fn validation_bleu4(cfg: &ExperimentConfig, model: &ReportModel, store: &ParamStore, val: &[Example]) -> Result<f64> {
    let candidates = generate_split(model, store, val, &cfg.decode)?;
    let references: Vec<Vec<Vec<usize>>> = val.iter().map(|ex| vec![ex.report.clone()]).collect();
    Ok(corpus_bleu(&candidates, &references)?[3])
}
