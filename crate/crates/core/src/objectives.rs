//! Image-text contrastive, image-text matching, language-modelling and
//! classifier losses.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

pub const TAU_MIN: f64 = 0.005;
pub const TAU_MAX: f64 = 0.5;
pub const BCE_CLAMP: f64 = 1e-7;

/// Momentum projections kept as extra contrastive negatives, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveState {
    capacity: usize,
    image_queue: VecDeque<Vec<f64>>,
    text_queue: VecDeque<Vec<f64>>,
}

impl ContrastiveState {
    pub fn new(capacity: usize) -> Self {
        ContrastiveState { capacity, image_queue: VecDeque::new(), text_queue: VecDeque::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.image_queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_queue.is_empty()
    }

    pub fn image_queue(&self) -> impl Iterator<Item = &[f64]> {
        self.image_queue.iter().map(Vec::as_slice)
    }

    pub fn text_queue(&self) -> impl Iterator<Item = &[f64]> {
        self.text_queue.iter().map(Vec::as_slice)
    }

    /// Appends the rows of both `[B, p]` tensors, dropping the oldest entries
    /// beyond capacity.
    pub fn enqueue(&mut self, image: &Tensor, text: &Tensor) -> Result<()> {
        if image.shape() != text.shape() || image.shape().len() != 2 {
            return Err(Error::dim("enqueue", image.shape(), text.shape()));
        }
        if let Some(first) = self.image_queue.front() {
            if first.len() != image.cols() {
                return Err(Error::contract("queue projection width changed"));
            }
        }
        for i in 0..image.rows() {
            self.image_queue.push_back(image.row(i).to_vec());
            self.text_queue.push_back(text.row(i).to_vec());
        }
        while self.image_queue.len() > self.capacity {
            self.image_queue.pop_front();
            self.text_queue.pop_front();
        }
        Ok(())
    }

    fn stacked(queue: &VecDeque<Vec<f64>>, cols: usize) -> Tensor {
        let data = queue.iter().flatten().copied().collect();
        Tensor::new([queue.len(), cols], data).expect("queue rows share a width")
    }
}

/// Symmetric InfoNCE. Each online image projection is scored against the
/// momentum text projections of the batch plus the text queue (and vice
/// versa); the paired row is the positive. Inputs are `[B, p]`, `tau` is a
/// scalar. The queue is not modified.
pub fn itc_loss<'t>(
    image: Var<'t>,
    text: Var<'t>,
    image_targets: &Tensor,
    text_targets: &Tensor,
    tau: Var<'t>,
    state: &ContrastiveState,
) -> Result<Var<'t>> {
    let tape = image.tape();
    if tau.numel() != 1 || tau.item() <= 0.0 {
        return Err(Error::contract(format!("temperature must be a positive scalar, got {:?}", tau.value().data())));
    }
    let shape = image.shape();
    if shape.len() != 2 || shape[0] == 0 || text.shape() != shape {
        return Err(Error::dim("itc_loss", &shape, &text.shape()));
    }
    if image_targets.shape() != shape.as_slice() || text_targets.shape() != shape.as_slice() {
        return Err(Error::dim("itc_loss targets", &shape, image_targets.shape()));
    }
    let inv_tau = tau.recip();
    let direction = |anchor: Var<'t>, targets: &Tensor, queue: &VecDeque<Vec<f64>>| -> Result<Var<'t>> {
        let mut candidates = tape.constant(targets.clone());
        if !queue.is_empty() {
            let q = tape.constant(ContrastiveState::stacked(queue, shape[1]));
            candidates = Var::concat_rows(&[candidates, q])?;
        }
        let logits = anchor.matmul(candidates.transpose()?)?.mul(inv_tau)?;
        let n = logits.shape()[1];
        let diag: Vec<usize> = (0..shape[0]).map(|i| i * n + i).collect();
        Ok(logits.log_softmax_rows()?.gather(diag, [shape[0]])?.mean().scale(-1.0))
    };
    let i2t = direction(image, text_targets, &state.text_queue)?;
    let t2i = direction(text, image_targets, &state.image_queue)?;
    Ok(i2t.add(t2i)?.scale(0.5))
}

/// Learnable temperature clamped to its allowed range.
pub fn clamp_temperature(tau: Var<'_>) -> Var<'_> {
    tau.clamp(TAU_MIN, TAU_MAX)
}

#[derive(Clone, Copy, Debug)]
pub struct ItmLoss<'t> {
    pub loss: Var<'t>,
    /// No negative pair was available (batch of one).
    pub positives_only: bool,
}

/// Mean two-way cross-entropy of `[N, 2]` match logits (column 1 = match).
pub fn itm_loss<'t>(logits: Var<'t>, matches: &[bool]) -> Result<ItmLoss<'t>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[1] != 2 || shape[0] != matches.len() || matches.is_empty() {
        return Err(Error::dim("itm_loss", &shape, &[matches.len(), 2]));
    }
    let picks: Vec<usize> = matches.iter().enumerate().map(|(i, &m)| 2 * i + usize::from(m)).collect();
    let loss = logits.log_softmax_rows()?.gather(picks, [matches.len()])?.mean().scale(-1.0);
    Ok(ItmLoss { loss, positives_only: matches.iter().all(|&m| m) })
}

/// Picks a mismatched partner `j != i` for every `i` in a batch of `n`.
/// Uniform by default; with `similarity` (`[n, n]`), partners are drawn with
/// probability proportional to `exp(sim / tau)`. Pairs for which
/// `equivalent(i, j)` holds are avoided when another choice exists.
/// Returns `None` for a batch of one.
pub fn sample_itm_negatives(
    n: usize,
    similarity: Option<(&Tensor, f64)>,
    equivalent: impl Fn(usize, usize) -> bool,
    rng: &mut impl Rng,
) -> Option<Vec<usize>> {
    if n < 2 {
        return None;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut pool: Vec<usize> = (0..n).filter(|&j| j != i && !equivalent(i, j)).collect();
        if pool.is_empty() {
            pool = (0..n).filter(|&j| j != i).collect();
        }
        let pick = match similarity {
            None => pool[rng.gen_range(0..pool.len())],
            Some((sim, tau)) => {
                let top = pool.iter().map(|&j| sim.at(i, j)).fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = pool.iter().map(|&j| ((sim.at(i, j) - top) / tau).exp()).collect();
                let mut u = rng.gen::<f64>() * weights.iter().sum::<f64>();
                let mut chosen = *pool.last().expect("pool is non-empty");
                for (&j, w) in pool.iter().zip(&weights) {
                    if u < *w {
                        chosen = j;
                        break;
                    }
                    u -= w;
                }
                chosen
            }
        };
        out.push(pick);
    }
    Some(out)
}

/// Mean next-token negative log-likelihood over non-[PAD] targets.
/// `logits` is `[L, V]`, `targets` has length `L`.
pub fn lm_loss<'t>(logits: Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::dim("lm_loss", &shape, &[targets.len()]));
    }
    let vocab = shape[1];
    if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::contract(format!("target id {bad} outside vocabulary of {vocab}")));
    }
    let picks: Vec<usize> = targets
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != PAD)
        .map(|(i, &t)| i * vocab + t)
        .collect();
    if picks.is_empty() {
        return Err(Error::contract("every target position is [PAD]"));
    }
    let n = picks.len();
    Ok(logits.log_softmax_rows()?.gather(picks, [n])?.mean().scale(-1.0))
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-7, 1 - 1e-7]`. `labels` must match the shape of `probabilities`.
pub fn bce_loss<'t>(probabilities: Var<'t>, labels: &Tensor) -> Result<Var<'t>> {
    if probabilities.shape() != labels.shape() {
        return Err(Error::dim("bce_loss", &probabilities.shape(), labels.shape()));
    }
    let tape = probabilities.tape();
    let p = probabilities.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let y = tape.constant(labels.clone());
    let one_minus_y = tape.constant(Tensor::new(labels.shape().to_vec(), labels.data().iter().map(|v| 1.0 - v).collect())?);
    let pos = y.mul(p.log())?;
    let neg = one_minus_y.mul(p.affine(-1.0, 1.0).log())?;
    Ok(pos.add(neg)?.mean().scale(-1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_itc: f64,
    pub l_itm: f64,
    pub l_lm: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(l_itc: f64, l_itm: f64, l_lm: f64) -> Self {
        LossBreakdown { l_itc, l_itm, l_lm, total: l_itc + l_itm + l_lm }
    }
}

/// Unweighted sum of the three generator losses.
pub fn total_loss<'t>(itc: Var<'t>, itm: Var<'t>, lm: Var<'t>) -> Result<(Var<'t>, LossBreakdown)> {
    let total = itc.add(itm)?.add(lm)?;
    Ok((total, LossBreakdown::from_parts(itc.item(), itm.item(), lm.item())))
}

#[cfg(test)]
mod tests;
