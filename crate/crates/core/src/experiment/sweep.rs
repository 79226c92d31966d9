use std::path::Path;

use log::info;

use super::config::{ExperimentConfig, KnowledgeSource};
use super::data::{Dataset, Split};
use super::evaluate::{evaluate, MetricReport};
use super::report::emit_report;
use super::stats::spearman;
use super::train::train_generator;
use crate::error::Result;

/// Test-split scores per seed and accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// Ascending; includes 1.0.
    pub accuracies: Vec<f64>,
    /// `(training seed, one report per accuracy)`.
    pub per_seed: Vec<(u64, Vec<MetricReport>)>,
}

impl SweepResult {
    /// Seed-averaged report per accuracy.
    pub fn means(&self) -> Vec<MetricReport> {
        let n = self.per_seed.len().max(1) as f64;
        (0..self.accuracies.len())
            .map(|k| {
                let mut sum = [0.0; 7];
                for (_, reports) in &self.per_seed {
                    for (s, v) in sum.iter_mut().zip(reports[k].values()) {
                        *s += v;
                    }
                }
                MetricReport::from_values(sum.map(|s| s / n))
            })
            .collect()
    }

    pub fn series(&self, seed_index: usize, metric: &str) -> Vec<f64> {
        self.per_seed[seed_index].1.iter().filter_map(|r| r.get(metric)).collect()
    }
}

fn condition_source(accuracy: f64) -> KnowledgeSource {
    if accuracy >= 1.0 {
        KnowledgeSource::GroundTruth
    } else {
        KnowledgeSource::Corrupted(accuracy)
    }
}

/// Trains and evaluates a fresh generator for every (seed, accuracy) pair.
/// Knowledge is corrupted at the same rate for training and test. Each
/// condition writes to `<out>/seed<s>/acc<a>/`; the tables and plots go to
/// `out`.
pub fn run_accuracy_sweep(cfg: &ExperimentConfig, ds: &Dataset, out: &Path) -> Result<SweepResult> {
    let accuracies = cfg.sweep_accuracies();
    let mut per_seed = Vec::new();
    for &seed in &cfg.sweep.seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.training.seed = seed;
        let mut reports = Vec::new();
        for &a in &accuracies {
            let dir = out.join(format!("seed{seed}")).join(format!("acc{a}"));
            let source = condition_source(a);
            let run = train_generator(&run_cfg, ds, &source, &dir)?;
            let report = evaluate(&run_cfg, ds, &run.model, &run.store, &source, Split::Test, &dir)?;
            info!("sweep seed {seed} accuracy {a}: BLEU-4 {:.4} CIDEr {:.4}", report.bleu4, report.cider);
            reports.push(report);
        }
        per_seed.push((seed, reports));
    }
    let result = SweepResult { accuracies, per_seed };
    emit_report(&result, out)?;
    Ok(result)
}

/// Outcome of the accuracy-trend checks, one line per property.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendCheck {
    pub lines: Vec<(String, bool)>,
}

impl TrendCheck {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|(_, ok)| *ok)
    }
}

/// BLEU-4 and CIDEr rise with accuracy in every seed (positive Spearman),
/// their seed means at the top accuracy beat the bottom one, and the
/// seed-averaged Spearman is positive for BLEU-4, CIDEr, ROUGE-L and METEOR.
pub fn check_trend(result: &SweepResult) -> TrendCheck {
    let mut lines = Vec::new();
    let means = result.means();
    for metric in ["bleu4", "cider"] {
        for (i, (seed, _)) in result.per_seed.iter().enumerate() {
            let rho = spearman(&result.accuracies, &result.series(i, metric));
            lines.push((format!("{metric} spearman seed {seed} = {rho:?} > 0"), rho.is_some_and(|r| r > 0.0)));
        }
        if let (Some(lo), Some(hi)) = (means.first(), means.last()) {
            let (l, h) = (lo.get(metric).unwrap_or(0.0), hi.get(metric).unwrap_or(0.0));
            lines.push((format!("mean {metric} {h:.4} at top accuracy > {l:.4} at bottom"), h > l));
        }
    }
    for metric in ["bleu4", "cider", "rouge_l", "meteor"] {
        let rhos: Vec<f64> = (0..result.per_seed.len())
            .map(|i| spearman(&result.accuracies, &result.series(i, metric)).unwrap_or(0.0))
            .collect();
        let mean = rhos.iter().sum::<f64>() / rhos.len().max(1) as f64;
        lines.push((format!("mean {metric} spearman {mean:.3} > 0"), mean > 0.0));
    }
    TrendCheck { lines }
}
