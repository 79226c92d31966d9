use std::fs;
use std::io::Write;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, KnowledgeSource};
use super::data::{Dataset, Split};
use super::report::{ensure_dir, write_csv};
use super::train::split_examples;
use crate::decoder::DecodeConfig;
use crate::error::{Error, Result};
use crate::model::{Example, ReportModel};
use crate::corpus::normalize_text;
use crate::nlg::{bleu, cider, corpus_bleu, meteor_lite, rouge_l, CiderVariant};
use crate::tensor::ParamStore;

pub const METRIC_COLUMNS: [&str; 7] = ["bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "meteor", "cider"];

/// Corpus BLEU, mean sentence ROUGE-L and METEOR, corpus CIDEr.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

impl MetricReport {
    pub fn values(&self) -> [f64; 7] {
        [self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.rouge_l, self.meteor, self.cider]
    }

    pub fn from_values(v: [f64; 7]) -> Self {
        MetricReport { bleu1: v[0], bleu2: v[1], bleu3: v[2], bleu4: v[3], rouge_l: v[4], meteor: v[5], cider: v[6] }
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        METRIC_COLUMNS.iter().position(|m| *m == metric).map(|i| self.values()[i])
    }
}

/// Scores tokenized candidates against one reference each.
pub fn score_texts<T: Eq + std::hash::Hash>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    variant: CiderVariant,
) -> Result<MetricReport> {
    if candidates.is_empty() || candidates.len() != references.len() {
        return Err(Error::contract(format!(
            "need matching non-empty candidate and reference lists, got {} and {}",
            candidates.len(),
            references.len()
        )));
    }
    let refs: Vec<Vec<&[T]>> = references.iter().map(|r| vec![r.as_slice()]).collect();
    let b = corpus_bleu(candidates, &refs)?;
    let n = candidates.len() as f64;
    let rouge = candidates.iter().zip(references).map(|(c, r)| rouge_l(c, r)).sum::<f64>() / n;
    let meteor = candidates.iter().zip(references).map(|(c, r)| meteor_lite(c, r)).sum::<f64>() / n;
    let cider = if candidates.len() >= 2 { cider(candidates, &refs, variant)?.mean } else { 0.0 };
    Ok(MetricReport { bleu1: b[0], bleu2: b[1], bleu3: b[2], bleu4: b[3], rouge_l: rouge, meteor, cider })
}

/// Generated token ids for each example, in order. Samples are spread over
/// the available cores; each one is decoded independently.
pub fn generate_split(
    model: &ReportModel,
    store: &ParamStore,
    examples: &[Example],
    decode: &DecodeConfig,
) -> Result<Vec<Vec<usize>>> {
    let workers = thread::available_parallelism().map_or(1, usize::from).min(examples.len()).max(1);
    let chunk = examples.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<Vec<usize>>>> = thread::scope(|s| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|ex| Ok(model.generate(store, &ex.image, &ex.knowledge, decode)?.tokens))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("decode worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(examples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    knowledge: String,
    reference: String,
    prediction: String,
}

/// Generates reports for `split`, writes `predictions.jsonl` and
/// `summary.csv` under `out`, and returns the scores.
pub fn evaluate(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    model: &ReportModel,
    store: &ParamStore,
    source: &KnowledgeSource,
    split: Split,
    out: &Path,
) -> Result<MetricReport> {
    let indices = ds.indices(split);
    if indices.is_empty() {
        return Err(Error::contract(format!("the {split:?} split is empty")));
    }
    let examples = split_examples(cfg, ds, indices, source)?;
    let predictions = generate_split(model, store, &examples, &cfg.decode)?;
    let references: Vec<Vec<usize>> = examples.iter().map(|e| e.report.clone()).collect();
    let report = score_texts(&predictions, &references, cfg.metrics.cider_variant)?;

    ensure_dir(out)?;
    let path = out.join("predictions.jsonl");
    let mut text = Vec::new();
    for ((&i, ex), pred) in indices.iter().zip(&examples).zip(&predictions) {
        let record = PredictionRecord {
            id: &ds.samples[i].id,
            knowledge: ds.vocab.detokenize(&ex.knowledge),
            reference: ds.vocab.detokenize(&ex.report),
            prediction: ds.vocab.detokenize(pred),
        };
        serde_json::to_writer(&mut text, &record).expect("record serializes");
        text.push(b'\n');
    }
    fs::File::create(&path).and_then(|mut f| f.write_all(&text)).map_err(|e| Error::io(&path, e))?;
    write_summary(&out.join("summary.csv"), &[("all".to_string(), report)], "condition")?;
    Ok(report)
}

/// One row per labelled report with the fixed metric columns.
pub fn write_summary(path: &Path, rows: &[(String, MetricReport)], key: &str) -> Result<()> {
    let mut header = vec![key];
    header.extend(METRIC_COLUMNS);
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(k, r)| std::iter::once(k.clone()).chain(r.values().iter().map(f64::to_string)).collect())
        .collect();
    write_csv(path, &header, &rows)
}

// Text fields tried in order, so `predictions.jsonl` from `evaluate` can feed either side.
const PREDICTION_KEYS: [&str; 4] = ["prediction", "text", "report", "reference"];
const REFERENCE_KEYS: [&str; 4] = ["reference", "text", "report", "prediction"];

fn read_texts(path: &Path, keys: &[&str]) -> Result<Vec<(String, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |detail: String| Error::Parse { what: "jsonl", location: format!("{}:{}", path.display(), n + 1), detail };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let id = match &value["id"] {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(x) => x.to_string(),
            _ => return Err(bad("missing \"id\"".into())),
        };
        let body = keys
            .iter()
            .find_map(|k| value[*k].as_str())
            .ok_or_else(|| bad(format!("no text field (one of {keys:?})")))?;
        // Corpus reports keep punctuation as separate tokens.
        let spaced: String = body.chars().flat_map(|c| if matches!(c, '.' | ',' | ';' | ':') { vec![' ', c, ' '] } else { vec![c] }).collect();
        out.push((id, normalize_text(&spaced).split(' ').map(str::to_string).collect()));
    }
    Ok(out)
}

/// Scores a predictions JSONL against a references JSONL, matched by `id`.
/// Writes one CSV row per prediction (sentence BLEU) and a final `corpus`
/// row with the corpus-level report.
pub fn score_files(predictions: &Path, references: &Path, variant: CiderVariant, out_csv: &Path) -> Result<MetricReport> {
    let refs: std::collections::BTreeMap<String, Vec<String>> = read_texts(references, &REFERENCE_KEYS)?.into_iter().collect();
    let preds = read_texts(predictions, &PREDICTION_KEYS)?;
    let mut cands = Vec::with_capacity(preds.len());
    let mut matched = Vec::with_capacity(preds.len());
    for (id, tokens) in &preds {
        let r = refs.get(id).ok_or_else(|| Error::Parse {
            what: "jsonl",
            location: predictions.display().to_string(),
            detail: format!("no reference for id '{id}'"),
        })?;
        if r.is_empty() {
            return Err(Error::contract(format!("reference for id '{id}' is empty")));
        }
        cands.push(tokens.clone());
        matched.push(r.clone());
    }
    let report = score_texts(&cands, &matched, variant)?;
    let per_cider = if cands.len() >= 2 {
        let sets: Vec<Vec<&[String]>> = matched.iter().map(|r| vec![r.as_slice()]).collect();
        cider(&cands, &sets, variant)?.per_sample
    } else {
        vec![0.0; cands.len()]
    };
    let mut rows = Vec::with_capacity(cands.len() + 1);
    for (((id, _), (c, r)), cd) in preds.iter().zip(cands.iter().zip(&matched)).zip(per_cider) {
        let b = bleu(c, &[r])?.scores;
        rows.push((id.clone(), MetricReport::from_values([b[0], b[1], b[2], b[3], rouge_l(c, r), meteor_lite(c, r), cd])));
    }
    rows.push(("corpus".to_string(), report));
    write_summary(out_csv, &rows, "id")?;
    Ok(report)
}
