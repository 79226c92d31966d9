use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{SyntheticImage, NODE_COUNT};
use crate::encoders::Linear;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub image_side: usize,
    pub image_channels: usize,
    /// Output channels of each 3×3 conv + 2×2 average-pool stage.
    pub stages: Vec<usize>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { image_side: 32, image_channels: 1, stages: vec![8, 16, 16] }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct ConvStage {
    weight: ParamId,
    bias: ParamId,
    side: usize,
    out_channels: usize,
    /// im2col gather: `[side², 9·c_in]` from `[side², c_in]`.
    patches: Vec<usize>,
    /// Four gathers (one per pool offset) from `[side², c_out]`.
    pool: [Vec<usize>; 4],
}

/// Small convnet: `stages` conv/ReLU/pool blocks, then a linear head to 27
/// sigmoid outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeClassifier {
    config: ClassifierConfig,
    stages: Vec<ConvStage>,
    pub head: Linear,
}

fn im2col_index(side: usize, channels: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(side * side * 9 * channels);
    for y in 0..side as isize {
        for x in 0..side as isize {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (sy, sx) = (y + dy, x + dx);
                    let inside = (0..side as isize).contains(&sy) && (0..side as isize).contains(&sx);
                    for c in 0..channels {
                        index.push(if inside {
                            (sy as usize * side + sx as usize) * channels + c
                        } else {
                            usize::MAX
                        });
                    }
                }
            }
        }
    }
    index
}

fn pool_index(side: usize, channels: usize) -> [Vec<usize>; 4] {
    let half = side / 2;
    let offsets = [(0, 0), (0, 1), (1, 0), (1, 1)];
    offsets.map(|(oy, ox)| {
        let mut index = Vec::with_capacity(half * half * channels);
        for y in 0..half {
            for x in 0..half {
                let src = (2 * y + oy) * side + 2 * x + ox;
                index.extend((0..channels).map(|c| src * channels + c));
            }
        }
        index
    })
}

impl NodeClassifier {
    pub fn new(store: &mut ParamStore, name: &str, config: &ClassifierConfig, rng: &mut impl Rng) -> Result<Self> {
        let reduction = 1usize << config.stages.len();
        if config.stages.is_empty() || config.image_side % reduction != 0 || config.image_channels == 0 {
            return Err(Error::config(format!(
                "image side {} must be divisible by 2^{} and stages non-empty",
                config.image_side,
                config.stages.len()
            )));
        }
        let mut stages = Vec::new();
        let mut side = config.image_side;
        let mut c_in = config.image_channels;
        for (i, &c_out) in config.stages.iter().enumerate() {
            stages.push(ConvStage {
                weight: store.uniform(format!("{name}.conv{i}.w"), [9 * c_in, c_out], 9 * c_in, rng)?,
                bias: store.zeros(format!("{name}.conv{i}.b"), [c_out])?,
                side,
                out_channels: c_out,
                patches: im2col_index(side, c_in),
                pool: pool_index(side, c_out),
            });
            side /= 2;
            c_in = c_out;
        }
        let flat = side * side * c_in;
        let head = Linear::new(store, &format!("{name}.head"), flat, NODE_COUNT, rng)?;
        Ok(NodeClassifier { config: config.clone(), stages, head })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    /// `[1, 27]` logits from `[H, W, C]` pixels.
    pub fn logits<'t>(&self, tape: &'t Tape, store: &ParamStore, pixels: Var<'t>) -> Result<Var<'t>> {
        let side = self.config.image_side;
        let expected = side * side * self.config.image_channels;
        if pixels.numel() != expected {
            return Err(Error::contract(format!(
                "classifier expects {side}x{side}x{} images, got {} values",
                self.config.image_channels,
                pixels.numel()
            )));
        }
        let mut x = pixels;
        for stage in &self.stages {
            let s = stage.side;
            let cols = stage.patches.len() / (s * s);
            let patches = x.gather(stage.patches.clone(), [s * s, cols])?;
            let conv = patches
                .matmul(tape.param(store, stage.weight))?
                .add_bias(tape.param(store, stage.bias))?
                .relu();
            let shape = [(s / 2) * (s / 2), stage.out_channels];
            let mut pooled = conv.gather(stage.pool[0].clone(), shape)?;
            for idx in &stage.pool[1..] {
                pooled = pooled.add(conv.gather(idx.clone(), shape)?)?;
            }
            x = pooled.scale(0.25);
        }
        let flat = x.reshape([1, x.numel()])?;
        self.head.forward(tape, store, flat)
    }

    /// `[1, 27]` probabilities.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, pixels: Var<'t>) -> Result<Var<'t>> {
        Ok(self.logits(tape, store, pixels)?.sigmoid())
    }

    pub fn classify_nodes(&self, store: &ParamStore, image: &SyntheticImage) -> Result<Vec<f64>> {
        let c = &self.config;
        if image.shape() != [c.image_side, c.image_side, c.image_channels] {
            return Err(Error::contract(format!(
                "image shape {:?} does not match classifier input {:?}",
                image.shape(),
                [c.image_side, c.image_side, c.image_channels]
            )));
        }
        let tape = Tape::new();
        Ok(self.forward(&tape, store, tape.constant(image.to_tensor()))?.value().into_data())
    }
}
