//! Stage drivers shared by the command line tool and the integration tests.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::dataset::FeatureTable;
use crate::error::{Error, Result};
use crate::heatmaps::{dispersion_heatmaps, predicted_labels, stability_heatmaps};
use crate::seg_metrics::{assemble_features, GroundTruthIndex, SegmentFeatures};
use crate::segmentation::{connected_components, Segment};
use crate::tensor_io::{smooth_labels, StreamManifest};
use crate::tracking::{track_sequence, TrackAssignment, TrackingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractConfig {
    /// Number of stability heatmaps in the feature vector.
    pub m: usize,
    /// Box kernel applied to the predicted labels; 1 disables smoothing.
    pub smoothing_kernel: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            m: 0,
            smoothing_kernel: 1,
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self, manifest: &StreamManifest) -> Result<()> {
        if self.m > manifest.num_blocks - 1 {
            return Err(Error::Config(format!(
                "m = {} exceeds num_blocks - 1 = {}",
                self.m,
                manifest.num_blocks - 1
            )));
        }
        if self.smoothing_kernel == 0 || self.smoothing_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "smoothing kernel must be odd and positive, got {}",
                self.smoothing_kernel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FrameExtraction {
    pub segments: Vec<Segment>,
    pub features: Vec<SegmentFeatures>,
}

/// Segments the predicted labels of one frame.
pub fn segment_frame(manifest: &StreamManifest, frame: usize, smoothing_kernel: usize) -> Result<Vec<Segment>> {
    let softmax = manifest.load_softmax(frame)?;
    let mut labels = predicted_labels(&softmax);
    if smoothing_kernel > 1 {
        labels = smooth_labels(&labels, smoothing_kernel)?;
    }
    Ok(connected_components(&labels, frame).segments)
}

/// Segments and features of one frame; `iou_adj` is filled in when the
/// frame has ground truth.
pub fn extract_frame(manifest: &StreamManifest, frame: usize, cfg: &ExtractConfig) -> Result<FrameExtraction> {
    let softmax = manifest.load_softmax(frame)?;
    let mut labels = predicted_labels(&softmax);
    if cfg.smoothing_kernel > 1 {
        labels = smooth_labels(&labels, cfg.smoothing_kernel)?;
    }
    let segments = connected_components(&labels, frame).segments;
    let dispersion = dispersion_heatmaps(&softmax);
    let stability = stability_heatmaps(&manifest.load_cell_states(frame)?);
    let gt = manifest.load_ground_truth(frame)?.map(|g| GroundTruthIndex::new(&g));
    let mut features = Vec::with_capacity(segments.len());
    for s in &segments {
        let mut f = assemble_features(s, &dispersion, &stability, cfg.m, &softmax)?;
        f.iou_adj = gt.as_ref().map(|g| g.iou_adj(s));
        features.push(f);
    }
    Ok(FrameExtraction { segments, features })
}

/// All frames, in parallel; results come back in frame order.
pub fn extract_stream(manifest: &StreamManifest, cfg: &ExtractConfig) -> Result<Vec<FrameExtraction>> {
    cfg.validate(manifest)?;
    (0..manifest.num_frames)
        .into_par_iter()
        .map(|t| extract_frame(manifest, t, cfg))
        .collect()
}

/// Tracks the extracted frames and copies the ids into the features.
pub fn track_extractions(
    frames: &mut [FrameExtraction],
    height: usize,
    width: usize,
    params: &TrackingParams,
) -> Result<Vec<Vec<TrackAssignment>>> {
    let mut segments: Vec<Vec<Segment>> = frames.iter_mut().map(|f| std::mem::take(&mut f.segments)).collect();
    let assignments = track_sequence(&mut segments, height, width, params)?;
    for (f, segs) in frames.iter_mut().zip(segments) {
        for (feat, s) in f.features.iter_mut().zip(&segs) {
            feat.track_id = s.track_id;
        }
        f.segments = segs;
    }
    Ok(assignments)
}

pub fn feature_table(frames: &[FrameExtraction], num_classes: usize, m: usize) -> Result<FeatureTable> {
    let all: Vec<SegmentFeatures> = frames.iter().flat_map(|f| f.features.iter().cloned()).collect();
    FeatureTable::from_segment_features(num_classes, m, &all)
}

/// `(frame, component) → track id` for patching a feature table read back
/// from disk.
pub fn track_id_map(frames: &[Vec<Segment>], assignments: &[Vec<TrackAssignment>]) -> HashMap<(usize, usize), u64> {
    let mut map = HashMap::new();
    for (segs, assign) in frames.iter().zip(assignments) {
        for (s, a) in segs.iter().zip(assign) {
            map.insert((s.frame, s.component), a.track_id);
        }
    }
    map
}
