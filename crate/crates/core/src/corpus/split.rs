use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Index lists into a corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` under `seed` and cuts it by `ratios` (train, val, test).
/// Train and val sizes are rounded; test takes the remainder.
pub fn split_corpus(n: usize, ratios: [f64; 3], seed: u64) -> Result<CorpusSplit> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("split ratios must be in [0,1] and sum to 1, got {ratios:?}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * ratios[0]).round() as usize;
    let n_val = (((n as f64) * ratios[1]).round() as usize).min(n - n_train);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(CorpusSplit { train: order, val, test })
}

/// Plain-text manifest, one sample id per line.
pub fn write_manifest(path: &Path, ids: &[&str]) -> Result<()> {
    let mut text = ids.join("\n");
    if !ids.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}
