use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub a_auc: f64,
    pub a_f1: f64,
    pub a_acc: f64,
    pub m_ap: f64,
    /// Labels left out of the ranking and F1 averages (single class present).
    pub excluded: usize,
}

/// Rank-based ROC-AUC (ties count one half). `None` unless both classes occur.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks for tied groups.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * midrank;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

/// Mean over positives of the precision among all items scoring at least as
/// high as that positive. `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 {
        return None;
    }
    let mut total = 0.0;
    for (k, _) in labels.iter().enumerate().filter(|(_, &y)| y) {
        let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[k]).collect();
        let hits = above.iter().filter(|&&j| labels[j]).count();
        total += hits as f64 / above.len() as f64;
    }
    Some(total / pos as f64)
}

fn f1(predicted: &[bool], labels: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &y) in predicted.iter().zip(labels) {
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}

/// Per-label AUC/F1/AP averaged over labels with both classes present, and
/// micro accuracy over every cell, all at threshold 0.5.
pub fn compute_multilabel_metrics(probabilities: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<ClassifierMetrics> {
    if probabilities.len() != labels.len() || probabilities.len() < 2 {
        return Err(Error::contract(format!(
            "need at least 2 aligned samples, got {} predictions and {} label rows",
            probabilities.len(),
            labels.len()
        )));
    }
    let width = labels[0].len();
    if probabilities.iter().any(|p| p.len() != width) || labels.iter().any(|l| l.len() != width) {
        return Err(Error::contract("ragged prediction or label rows"));
    }
    let any_pos = labels.iter().flatten().any(|&y| y);
    let any_neg = labels.iter().flatten().any(|&y| !y);
    if !any_pos || !any_neg {
        return Err(Error::contract("labels need at least one positive and one negative"));
    }

    let mut correct = 0usize;
    for (p, l) in probabilities.iter().zip(labels) {
        correct += p.iter().zip(l).filter(|(&p, &y)| (p >= 0.5) == y).count();
    }
    let a_acc = correct as f64 / (probabilities.len() * width) as f64;

    let (mut auc, mut f, mut ap, mut used) = (0.0, 0.0, 0.0, 0usize);
    for j in 0..width {
        let scores: Vec<f64> = probabilities.iter().map(|p| p[j]).collect();
        let truth: Vec<bool> = labels.iter().map(|l| l[j]).collect();
        let Some(a) = roc_auc(&scores, &truth) else { continue };
        let predicted: Vec<bool> = scores.iter().map(|&s| s >= 0.5).collect();
        auc += a;
        f += f1(&predicted, &truth);
        ap += average_precision(&scores, &truth).expect("label has positives");
        used += 1;
    }
    let mean = |x: f64| if used == 0 { 0.0 } else { x / used as f64 };
    Ok(ClassifierMetrics { a_auc: mean(auc), a_f1: mean(f), a_acc, m_ap: mean(ap), excluded: width - used })
}
