use rand::Rng;

use super::config::ModelConfig;
use super::layers::{LayerNormParams, Linear, NamedParams, TransformerLayer};
use crate::corpus::SyntheticImage;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct VisualFeatures<'t> {
    /// `[P + 1, d]`, row 0 is [CLS].
    pub f_i: Var<'t>,
    /// Unit-norm `[1, proj_dim]`.
    pub cls_projection: Var<'t>,
}

/// Patch-based transformer over `[H, W, C]` images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisionEncoder {
    pub patch_embed: Linear,
    pub cls_token: ParamId,
    pub positions: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub norm_final: LayerNormParams,
    pub projection: ParamId,
    patch: usize,
    side: usize,
    channels: usize,
    patch_index: Vec<usize>,
}

/// Flat-index gather that turns an `[side, side, channels]` image into
/// `[(side/patch)², patch·patch·channels]` patch rows, row-major over the grid.
pub fn patch_index(side: usize, patch: usize, channels: usize) -> Result<Vec<usize>> {
    if patch == 0 || side % patch != 0 {
        return Err(Error::config(format!("image side {side} is not divisible by patch {patch}")));
    }
    let grid = side / patch;
    let mut index = Vec::with_capacity(side * side * channels);
    for pr in 0..grid {
        for pc in 0..grid {
            for dy in 0..patch {
                for dx in 0..patch {
                    let pixel = (pr * patch + dy) * side + pc * patch + dx;
                    index.extend((0..channels).map(|c| pixel * channels + c));
                }
            }
        }
    }
    Ok(index)
}

impl VisionEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.width;
        let patch_dim = cfg.patch * cfg.patch * cfg.channels;
        Ok(VisionEncoder {
            patch_embed: Linear::new(store, &format!("{name}.patch_embed"), patch_dim, d, rng)?,
            cls_token: store.uniform(format!("{name}.cls"), [1, d], d, rng)?,
            positions: store.uniform(format!("{name}.pos"), [cfg.num_patches() + 1, d], d, rng)?,
            layers: (0..cfg.layers)
                .map(|i| {
                    TransformerLayer::new(store, &format!("{name}.layer{i}"), d, cfg.heads, d * cfg.ffn_mult, false, rng)
                })
                .collect::<Result<_>>()?,
            norm_final: LayerNormParams::new(store, &format!("{name}.ln_final"), d)?,
            projection: store.uniform(format!("{name}.proj"), [d, cfg.proj_dim], d, rng)?,
            patch: cfg.patch,
            side: cfg.image_side,
            channels: cfg.channels,
            patch_index: patch_index(cfg.image_side, cfg.patch, cfg.channels)?,
        })
    }

    pub fn num_patches(&self) -> usize {
        (self.side / self.patch).pow(2)
    }

    pub fn encode_image<'t>(&self, tape: &'t Tape, store: &ParamStore, image: &SyntheticImage) -> Result<VisualFeatures<'t>> {
        if image.height() != self.side || image.width() != self.side || image.channels() != self.channels {
            return Err(Error::config(format!(
                "image {}x{}x{} does not match encoder {}x{}x{} (patch {})",
                image.height(),
                image.width(),
                image.channels(),
                self.side,
                self.side,
                self.channels,
                self.patch
            )));
        }
        self.encode(tape, store, tape.constant(image.to_tensor()))
    }

    /// Encodes an `[H, W, C]` tensor; differentiable with respect to the pixels.
    pub fn encode<'t>(&self, tape: &'t Tape, store: &ParamStore, pixels: Var<'t>) -> Result<VisualFeatures<'t>> {
        let expected = self.side * self.side * self.channels;
        if pixels.numel() != expected {
            return Err(Error::config(format!(
                "image with {} values does not match {}x{}x{}",
                pixels.numel(),
                self.side,
                self.side,
                self.channels
            )));
        }
        let patch_dim = self.patch * self.patch * self.channels;
        let patches = pixels.gather(self.patch_index.clone(), [self.num_patches(), patch_dim])?;
        let tokens = self.patch_embed.forward(tape, store, patches)?;
        let x = Var::concat_rows(&[tape.param(store, self.cls_token), tokens])?;
        let mut x = x.add(tape.param(store, self.positions))?;
        for layer in &self.layers {
            x = layer.forward(tape, store, x, None, None)?;
        }
        let f_i = self.norm_final.forward(tape, store, x)?;
        let cls_projection = self.project_cls(tape, store, f_i)?;
        Ok(VisualFeatures { f_i, cls_projection })
    }

    /// Unit-norm projection of row 0 of `features` (raw or knowledge-enhanced).
    pub fn project_cls<'t>(&self, tape: &'t Tape, store: &ParamStore, features: Var<'t>) -> Result<Var<'t>> {
        Ok(features
            .slice_rows(0..1)?
            .matmul(tape.param(store, self.projection))?
            .l2_normalize_rows())
    }

    pub fn named_params(&self) -> NamedParams {
        let mut out = vec![
            ("patch_embed.w".to_string(), self.patch_embed.weight),
            ("patch_embed.b".to_string(), self.patch_embed.bias),
            ("cls".to_string(), self.cls_token),
            ("pos".to_string(), self.positions),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.named_params(&format!("layer{i}")));
        }
        out.push(("ln_final.g".to_string(), self.norm_final.gain));
        out.push(("ln_final.b".to_string(), self.norm_final.bias));
        out.push(("proj".to_string(), self.projection));
        out
    }
}
