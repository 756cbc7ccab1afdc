//! Segment-wise metrics: heatmap aggregates over segments, mean class
//! probabilities, the canonical feature vector `V_m = U ∪ CS_m`, and the
//! adjusted IoU target.
//!
//! Canonical feature order (length `22 + c + 5m`):
//!
//! ```text
//! S, S_in, S_bd, S_rel, S_rel_in, center_row, center_col,
//! E_mean, E_in, E_bd, E_rel, E_rel_in,  V_…,  M_…,
//! P_0 … P_{c-1},
//! C1_mean, C1_in, C1_bd, C1_rel, C1_rel_in, …, Cm_…
//! ```
//!
//! Because stability blocks come last, the `m` vector is a prefix of the
//! `m + 1` vector.

use std::collections::HashSet;
use std::io::Write;

use crate::error::{Error, Result};
use crate::heatmaps::{DispersionHeatmaps, HeatmapFrame, LabelFrame, SoftmaxFrame};
use crate::segmentation::{connected_components, Segment, Segmentation};

/// Number of class-independent, stability-independent features.
pub const BASE_FEATURES: usize = 22;
pub const STATS_PER_HEATMAP: usize = 5;

pub fn feature_count(num_classes: usize, m: usize) -> usize {
    BASE_FEATURES + num_classes + STATS_PER_HEATMAP * m
}

/// Column index of the mean segment entropy `Ē`.
pub const MEAN_ENTROPY_INDEX: usize = 7;

/// Position of `center_row`; `center_col` follows it.
pub const CENTER_ROW_INDEX: usize = 5;

const STAT_SUFFIXES: [&str; 5] = ["mean", "in", "bd", "rel", "rel_in"];

pub fn feature_names(num_classes: usize, m: usize) -> Vec<String> {
    let mut names: Vec<String> = ["S", "S_in", "S_bd", "S_rel", "S_rel_in", "center_row", "center_col"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for d in ["E", "V", "M"] {
        names.extend(STAT_SUFFIXES.iter().map(|s| format!("{d}_{s}")));
    }
    names.extend((0..num_classes).map(|y| format!("P_{y}")));
    for j in 1..=m {
        names.extend(STAT_SUFFIXES.iter().map(|s| format!("C{j}_{s}")));
    }
    names
}

/// Mean of a heatmap over all, inner and boundary pixels plus the two
/// size-relative variants.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeatmapStats {
    pub mean: f64,
    pub mean_in: f64,
    pub mean_bd: f64,
    pub rel: f64,
    pub rel_in: f64,
}

impl HeatmapStats {
    pub fn as_array(&self) -> [f64; 5] {
        [self.mean, self.mean_in, self.mean_bd, self.rel, self.rel_in]
    }
}

fn mean_over(pixels: &[u32], values: &[f64]) -> f64 {
    if pixels.is_empty() {
        return 0.0;
    }
    pixels.iter().map(|&z| values[z as usize]).sum::<f64>() / pixels.len() as f64
}

/// Aggregates a heatmap over a segment. An empty interior yields
/// `mean_in = rel_in = 0`.
pub fn aggregate_heatmap(segment: &Segment, heatmap: &HeatmapFrame) -> HeatmapStats {
    let v = &heatmap.values;
    let mean = mean_over(&segment.pixels, v);
    let mean_in = mean_over(&segment.inner, v);
    let mean_bd = mean_over(&segment.boundary, v);
    let s_bd = segment.size_boundary() as f64;
    HeatmapStats {
        mean,
        mean_in,
        mean_bd,
        rel: mean * segment.size() as f64 / s_bd,
        rel_in: mean_in * segment.size_inner() as f64 / s_bd,
    }
}

/// `P(y|k)`: softmax averaged over the segment's pixels.
pub fn mean_class_probs(segment: &Segment, softmax: &SoftmaxFrame) -> Vec<f64> {
    let c = softmax.num_classes();
    let mut acc = vec![0.0; c];
    for &z in &segment.pixels {
        for (a, p) in acc.iter_mut().zip(softmax.pixel(z as usize)) {
            *a += p;
        }
    }
    let n = segment.size() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    pub frame: usize,
    pub component: usize,
    pub class_id: u16,
    pub track_id: Option<u64>,
    pub size: usize,
    pub size_in: usize,
    pub size_bd: usize,
    pub center: (f64, f64),
    /// E, V, M in that order.
    pub dispersion: [HeatmapStats; 3],
    pub class_probs: Vec<f64>,
    /// `C^1 … C^m`.
    pub stability: Vec<HeatmapStats>,
    pub iou_adj: Option<f64>,
}

impl SegmentFeatures {
    pub fn rel_size(&self) -> f64 {
        self.size as f64 / self.size_bd as f64
    }

    pub fn rel_size_in(&self) -> f64 {
        self.size_in as f64 / self.size_bd as f64
    }

    pub fn has_interior(&self) -> bool {
        self.size_in > 0
    }

    pub fn num_features(&self) -> usize {
        feature_count(self.class_probs.len(), self.stability.len())
    }

    /// The canonical feature vector.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_features());
        v.extend([
            self.size as f64,
            self.size_in as f64,
            self.size_bd as f64,
            self.rel_size(),
            self.rel_size_in(),
            self.center.0,
            self.center.1,
        ]);
        for d in &self.dispersion {
            v.extend(d.as_array());
        }
        v.extend_from_slice(&self.class_probs);
        for t in &self.stability {
            v.extend(t.as_array());
        }
        v
    }
}

/// Builds `V_m` for one segment from the frame's heatmaps. `m = 0` gives the
/// baseline set `U`.
pub fn assemble_features(
    segment: &Segment,
    dispersion: &DispersionHeatmaps,
    stability: &[HeatmapFrame],
    m: usize,
    softmax: &SoftmaxFrame,
) -> Result<SegmentFeatures> {
    if m > stability.len() {
        return Err(Error::Config(format!(
            "m = {m} exceeds the {} available stability heatmaps (num_blocks - 1)",
            stability.len()
        )));
    }
    let d = dispersion.as_array();
    Ok(SegmentFeatures {
        frame: segment.frame,
        component: segment.component,
        class_id: segment.class_id,
        track_id: segment.track_id,
        size: segment.size(),
        size_in: segment.size_inner(),
        size_bd: segment.size_boundary(),
        center: segment.center,
        dispersion: [
            aggregate_heatmap(segment, d[0]),
            aggregate_heatmap(segment, d[1]),
            aggregate_heatmap(segment, d[2]),
        ],
        class_probs: mean_class_probs(segment, softmax),
        stability: stability[..m].iter().map(|h| aggregate_heatmap(segment, h)).collect(),
        iou_adj: None,
    })
}

/// Ground-truth components of one frame, built once and shared by all
/// predicted segments of that frame.
#[derive(Debug, Clone)]
pub struct GroundTruthIndex {
    labels: LabelFrame,
    components: Segmentation,
}

impl GroundTruthIndex {
    pub fn new(labels: &LabelFrame) -> Self {
        Self {
            labels: labels.clone(),
            components: connected_components(labels, 0),
        }
    }

    /// `|k ∩ Q| / |k ∪ Q|` where `Q` is the union of same-class ground-truth
    /// components intersecting `k`; 0 when `Q` is empty.
    pub fn iou_adj(&self, segment: &Segment) -> f64 {
        let gt = self.labels.labels();
        let mut hit: HashSet<u32> = HashSet::new();
        let mut intersection = 0usize;
        for &z in &segment.pixels {
            if gt[z as usize] == segment.class_id {
                intersection += 1;
                hit.insert(self.components.component_of[z as usize]);
            }
        }
        if intersection == 0 {
            return 0.0;
        }
        let q: usize = hit
            .iter()
            .map(|&id| self.components.segments[id as usize].size())
            .sum();
        intersection as f64 / (segment.size() + q - intersection) as f64
    }
}

pub fn iou_adj(segment: &Segment, gt_labels: &LabelFrame) -> f64 {
    GroundTruthIndex::new(gt_labels).iou_adj(segment)
}

pub const FEATURE_CSV_META: [&str; 5] = ["frame", "component", "class", "track_id", "iou_adj"];

pub fn feature_csv_header(num_classes: usize, m: usize) -> String {
    let mut cols: Vec<String> = FEATURE_CSV_META.iter().map(|s| s.to_string()).collect();
    cols.extend(feature_names(num_classes, m));
    cols.join(",")
}

/// Writes feature rows; all rows must share `(c, m)`.
pub fn write_features_csv<W: Write>(mut out: W, rows: &[SegmentFeatures]) -> Result<()> {
    let (c, m) = match rows.first() {
        Some(r) => (r.class_probs.len(), r.stability.len()),
        None => (0, 0),
    };
    let io = |e| Error::io("<features csv>", e);
    writeln!(out, "{}", feature_csv_header(c, m)).map_err(io)?;
    for r in rows {
        if r.class_probs.len() != c || r.stability.len() != m {
            return Err(Error::invalid("feature rows disagree on (c, m)"));
        }
        let mut line = format!(
            "{},{},{},{},{}",
            r.frame,
            r.component,
            r.class_id,
            r.track_id.map(|t| t.to_string()).unwrap_or_default(),
            r.iou_adj.map(|v| v.to_string()).unwrap_or_default()
        );
        for v in r.to_vector() {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}
