use rand::Rng;

use super::graph::KnowledgeGraph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Grid cell (row, col) on a 4x4 layout for each organ, in graph organ order.
const ORGAN_CELLS: [(usize, usize); 7] = [(1, 0), (1, 3), (0, 1), (3, 1), (2, 1), (0, 2), (3, 3)];
const GRID: usize = 4;
const BACKGROUND: f64 = 0.1;
const GLYPH_ON: f64 = 1.0;
const GLYPH_OFF: f64 = 0.35;

/// `height x width x channels` image with values in `[0, 1]`, stored HWC.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticImage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
    planted: Vec<String>,
}

impl SyntheticImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::dim("SyntheticImage::new", &[height, width, channels], &[pixels.len()]));
        }
        Ok(SyntheticImage {
            height,
            width,
            channels,
            pixels,
            planted: Vec::new(),
        })
    }

    pub fn blank(side: usize, channels: usize) -> Self {
        SyntheticImage::new(side, side, channels, vec![0.0; side * side * channels]).expect("shape")
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Finding names drawn into the image.
    pub fn planted_findings(&self) -> &[String] {
        &self.planted
    }

    pub fn set_planted_findings(&mut self, planted: Vec<String>) {
        self.planted = planted;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.height, self.width, self.channels], self.pixels.clone()).expect("shape")
    }
}

/// 4x4-style binary pattern for a finding, distinct for every finding rank and
/// with at least six lit cells out of `q * q`.
pub fn glyph(rank: usize, q: usize) -> Vec<bool> {
    let cells = q * q;
    let mut state = (rank as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    loop {
        state ^= state >> 31;
        state = state.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        state ^= state >> 29;
        let bits: Vec<bool> = (0..cells).map(|i| (state >> (i % 64)) & 1 == 1).collect();
        let lit = bits.iter().filter(|b| **b).count();
        if lit >= 6.min(cells / 2) && lit < cells.max(2) {
            return bits;
        }
    }
}

/// Renders background noise plus one glyph per planted finding. Each organ
/// owns a fixed grid cell; its findings occupy the cell's quadrants.
pub fn render_image(
    findings: &[usize],
    graph: &KnowledgeGraph,
    side: usize,
    channels: usize,
    noise: f64,
    rng: &mut impl Rng,
) -> Result<SyntheticImage> {
    // Quadrants below 4x4 cannot give every finding a distinct glyph.
    if side % (2 * GRID) != 0 || side < 8 * GRID {
        return Err(Error::config(format!("image side {side} must be a multiple of {} and at least {}", 2 * GRID, 8 * GRID)));
    }
    let cell = side / GRID;
    let q = cell / 2;
    let mut gray = vec![0.0; side * side];
    for px in gray.iter_mut() {
        *px = BACKGROUND + noise * rng.gen::<f64>();
    }
    let organs = graph.organs();
    let ranks = graph.findings();
    for &f in findings {
        let organ = graph
            .organ_of(f)
            .ok_or_else(|| Error::contract(format!("node {} is not a finding", graph.name(f))))?;
        let organ_pos = organs.iter().position(|&o| o == organ).expect("organ listed");
        let slot = graph
            .findings_of(organ)
            .iter()
            .position(|&x| x == f)
            .expect("finding listed under organ");
        let (cr, cc) = ORGAN_CELLS[organ_pos % ORGAN_CELLS.len()];
        let (y0, x0) = (cr * cell + (slot / 2) * q, cc * cell + (slot % 2) * q);
        let rank = ranks.iter().position(|&x| x == f).expect("ranked");
        let pattern = glyph(rank, q);
        for dy in 0..q {
            for dx in 0..q {
                let v = if pattern[dy * q + dx] { GLYPH_ON } else { GLYPH_OFF };
                gray[(y0 + dy) * side + x0 + dx] = v - noise * rng.gen::<f64>();
            }
        }
    }
    let pixels = gray
        .iter()
        .flat_map(|&v| std::iter::repeat(v.clamp(0.0, 1.0)).take(channels))
        .collect();
    let mut img = SyntheticImage::new(side, side, channels, pixels)?;
    img.set_planted_findings(findings.iter().map(|&f| graph.name(f).to_string()).collect());
    Ok(img)
}
