//! Pixel-wise heatmaps: dispersion measures of the softmax output and
//! stability of the per-block mean cell states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on per-pixel softmax normalization before renormalizing.
pub const SOFTMAX_TOLERANCE: f64 = 1e-5;

/// Per-pixel class probabilities, stored `(height, width, classes)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxFrame {
    height: usize,
    width: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

impl SoftmaxFrame {
    /// Validates finiteness, non-negativity and normalization (within
    /// [`SOFTMAX_TOLERANCE`]), then renormalizes every pixel exactly.
    pub fn new(height: usize, width: usize, num_classes: usize, mut probs: Vec<f64>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("softmax needs at least 2 classes"));
        }
        if probs.len() != height * width * num_classes {
            return Err(Error::invalid(format!(
                "softmax of {height}x{width}x{num_classes} needs {} values, got {}",
                height * width * num_classes,
                probs.len()
            )));
        }
        for (z, pixel) in probs.chunks_exact_mut(num_classes).enumerate() {
            if let Some(p) = pixel.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return Err(Error::invalid(format!("pixel {z}: invalid probability {p}")));
            }
            let sum: f64 = pixel.iter().sum();
            if (sum - 1.0).abs() > SOFTMAX_TOLERANCE {
                return Err(Error::invalid(format!("pixel {z}: probabilities sum to {sum}")));
            }
            pixel.iter_mut().for_each(|p| *p /= sum);
        }
        Ok(Self {
            height,
            width,
            num_classes,
            probs,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Probabilities of pixel `z` (flat index `row * width + col`).
    pub fn pixel(&self, z: usize) -> &[f64] {
        &self.probs[z * self.num_classes..(z + 1) * self.num_classes]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Per-pixel class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelFrame {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u16>,
}

impl LabelFrame {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::invalid(format!(
                "label frame of {height}x{width} needs {} values, got {}",
                height * width,
                labels.len()
            )));
        }
        if num_classes > u16::MAX as usize + 1 {
            return Err(Error::invalid("too many classes"));
        }
        if let Some((z, l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= num_classes) {
            return Err(Error::invalid(format!("label {l} at pixel {z} outside 0..{num_classes}")));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapKind {
    Entropy,
    VariationRatio,
    ProbabilityMargin,
    /// Mean cell state of a block (1-based).
    MeanCellState(usize),
    /// Stability `C^j` (1-based `j`).
    Stability(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapFrame {
    pub height: usize,
    pub width: usize,
    pub kind: HeatmapKind,
    pub values: Vec<f64>,
}

impl HeatmapFrame {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Mean cell states of all blocks, stored `(height, width, blocks)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStateStack {
    height: usize,
    width: usize,
    blocks: usize,
    values: Vec<f64>,
}

impl CellStateStack {
    pub fn new(height: usize, width: usize, blocks: usize, values: Vec<f64>) -> Result<Self> {
        if blocks < 2 {
            return Err(Error::invalid(format!("cell-state stack needs >= 2 blocks, got {blocks}")));
        }
        if values.len() != height * width * blocks {
            return Err(Error::invalid(format!(
                "cell-state stack of {height}x{width}x{blocks} needs {} values, got {}",
                height * width * blocks,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite cell state at flat index {i}")));
        }
        Ok(Self {
            height,
            width,
            blocks,
            values,
        })
    }

    /// Builds a stack from per-block mean cell-state maps (block 1 first).
    pub fn from_block_maps(maps: &[HeatmapFrame]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("no cell-state blocks"))?;
        let (h, w) = (first.height, first.width);
        if maps.iter().any(|m| m.height != h || m.width != w) {
            return Err(Error::invalid("cell-state blocks differ in size"));
        }
        let l = maps.len();
        let mut values = vec![0.0; h * w * l];
        for (i, map) in maps.iter().enumerate() {
            for (z, v) in map.values.iter().enumerate() {
                values[z * l + i] = *v;
            }
        }
        Self::new(h, w, l, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks
    }

    /// Mean cell state of `block` (1-based) at pixel `z`.
    pub fn mean_state(&self, z: usize, block: usize) -> f64 {
        self.values[z * self.blocks + block - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-pixel argmax, lowest class index on ties.
pub fn predicted_labels(softmax: &SoftmaxFrame) -> LabelFrame {
    let labels = softmax
        .probs
        .chunks_exact(softmax.num_classes)
        .map(|p| argmax(p) as u16)
        .collect();
    LabelFrame {
        height: softmax.height,
        width: softmax.width,
        num_classes: softmax.num_classes,
        labels,
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionHeatmaps {
    pub entropy: HeatmapFrame,
    pub variation_ratio: HeatmapFrame,
    pub probability_margin: HeatmapFrame,
}

impl DispersionHeatmaps {
    /// Heatmaps in canonical order E, V, M.
    pub fn as_array(&self) -> [&HeatmapFrame; 3] {
        [&self.entropy, &self.variation_ratio, &self.probability_margin]
    }
}

/// Normalized entropy, variation ratio and probability margin of one
/// probability vector.
pub fn pixel_dispersion(p: &[f64]) -> (f64, f64, f64) {
    let c = p.len();
    let mut h = 0.0;
    for &q in p {
        if q > 0.0 {
            h -= q * q.ln();
        }
    }
    let entropy = (h / (c as f64).ln()).clamp(0.0, 1.0);

    let top = argmax(p);
    let max = p[top];
    let second = p
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != top)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let variation_ratio = (1.0 - max).clamp(0.0, 1.0);
    let margin = (1.0 - max + second).clamp(0.0, 1.0);
    (entropy, variation_ratio, margin)
}

pub fn dispersion_heatmaps(softmax: &SoftmaxFrame) -> DispersionHeatmaps {
    let n = softmax.num_pixels();
    let mut e = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    for p in softmax.probs.chunks_exact(softmax.num_classes) {
        let (pe, pv, pm) = pixel_dispersion(p);
        e.push(pe);
        v.push(pv);
        m.push(pm);
    }
    let frame = |kind, values| HeatmapFrame {
        height: softmax.height,
        width: softmax.width,
        kind,
        values,
    };
    DispersionHeatmaps {
        entropy: frame(HeatmapKind::Entropy, e),
        variation_ratio: frame(HeatmapKind::VariationRatio, v),
        probability_margin: frame(HeatmapKind::ProbabilityMargin, m),
    }
}

/// Reduces a raw `(height, width, features)` block state to its per-pixel
/// feature mean.
pub fn mean_cell_state(height: usize, width: usize, features: usize, raw: &[f64]) -> Result<HeatmapFrame> {
    if features == 0 {
        return Err(Error::invalid("cell state needs at least one feature"));
    }
    if raw.len() != height * width * features {
        return Err(Error::invalid(format!(
            "raw cell state of {height}x{width}x{features} needs {} values, got {}",
            height * width * features,
            raw.len()
        )));
    }
    let values = raw
        .chunks_exact(features)
        .map(|f| f.iter().sum::<f64>() / features as f64)
        .collect();
    Ok(HeatmapFrame {
        height,
        width,
        kind: HeatmapKind::MeanCellState(0),
        values,
    })
}

/// `C^j_z = |C̄^1_z − C̄^{j+1}_z|` for `j = 1..blocks−1`.
pub fn stability_heatmaps(stack: &CellStateStack) -> Vec<HeatmapFrame> {
    let n = stack.height * stack.width;
    (1..stack.blocks)
        .map(|j| HeatmapFrame {
            height: stack.height,
            width: stack.width,
            kind: HeatmapKind::Stability(j),
            values: (0..n)
                .map(|z| (stack.mean_state(z, 1) - stack.mean_state(z, j + 1)).abs())
                .collect(),
        })
        .collect()
}
