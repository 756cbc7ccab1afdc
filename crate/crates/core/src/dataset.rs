//! Meta datasets: per-segment feature tables, time-series records built
//! from track histories, seeded train/val/test splits and z-scoring.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seg_metrics::{
    feature_count, feature_csv_header, feature_names, SegmentFeatures, CENTER_ROW_INDEX, FEATURE_CSV_META,
};

/// Largest supported history length.
pub const MAX_HISTORY: usize = 10;

/// One segment's canonical features plus bookkeeping columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub frame: usize,
    pub component: usize,
    pub class_id: u16,
    pub track_id: Option<u64>,
    pub iou_adj: Option<f64>,
    pub features: Vec<f64>,
}

impl FeatureRow {
    pub fn size(&self) -> f64 {
        self.features[0]
    }

    pub fn has_interior(&self) -> bool {
        self.features[1] > 0.0
    }
}

/// All segments of a stream at a fixed `(c, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub num_classes: usize,
    pub m: usize,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn from_segment_features(num_classes: usize, m: usize, feats: &[SegmentFeatures]) -> Result<Self> {
        let rows = feats
            .iter()
            .map(|f| {
                if f.class_probs.len() != num_classes || f.stability.len() != m {
                    return Err(Error::invalid("segment features disagree with table (c, m)"));
                }
                Ok(FeatureRow {
                    frame: f.frame,
                    component: f.component,
                    class_id: f.class_id,
                    track_id: f.track_id,
                    iou_adj: f.iou_adj,
                    features: f.to_vector(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            num_classes,
            m,
            rows,
        })
    }

    pub fn width(&self) -> usize {
        feature_count(self.num_classes, self.m)
    }

    /// The same table restricted to the first `m` stability blocks.
    pub fn with_m(&self, m: usize) -> Result<Self> {
        if m > self.m {
            return Err(Error::Config(format!("m = {m} exceeds the table's m = {}", self.m)));
        }
        let width = feature_count(self.num_classes, m);
        Ok(Self {
            num_classes: self.num_classes,
            m,
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    features: r.features[..width].to_vec(),
                    ..r.clone()
                })
                .collect(),
        })
    }

    /// Writes track ids into rows keyed by `(frame, component)`.
    pub fn set_track_ids(&mut self, ids: &HashMap<(usize, usize), u64>) {
        for r in &mut self.rows {
            r.track_id = ids.get(&(r.frame, r.component)).copied();
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<feature csv>", e);
        writeln!(out, "{}", feature_csv_header(self.num_classes, self.m)).map_err(io)?;
        for r in &self.rows {
            let mut line = format!(
                "{},{},{},{},{}",
                r.frame,
                r.component,
                r.class_id,
                opt(r.track_id),
                opt(r.iou_adj)
            );
            for v in &r.features {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |message: String| Error::Tensor {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').collect();
        if header.len() < FEATURE_CSV_META.len() || header[..FEATURE_CSV_META.len()] != FEATURE_CSV_META {
            return Err(bad("missing frame,component,class,track_id,iou_adj columns".into()));
        }
        let names = &header[FEATURE_CSV_META.len()..];
        let num_classes = names.iter().filter(|n| n.starts_with("P_")).count();
        let m = names.iter().filter(|n| n.starts_with('C') && n.ends_with("_mean")).count();
        if names != feature_names(num_classes, m) {
            return Err(bad("feature columns are not in canonical order".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(bad(format!("line {}: {} fields, expected {}", i + 2, f.len(), header.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("line {}: bad number {s:?}", i + 2)))
            };
            let int = |s: &str| -> Result<u64> {
                s.parse::<u64>()
                    .map_err(|_| bad(format!("line {}: bad integer {s:?}", i + 2)))
            };
            rows.push(FeatureRow {
                frame: int(f[0])? as usize,
                component: int(f[1])? as usize,
                class_id: int(f[2])? as u16,
                track_id: if f[3].is_empty() { None } else { Some(int(f[3])?) },
                iou_adj: if f[4].is_empty() { None } else { Some(num(f[4])?) },
                features: f[5..].iter().map(|s| num(s)).collect::<Result<_>>()?,
            });
        }
        Ok(Self {
            num_classes,
            m,
            rows,
        })
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One training example: current features plus up to `T` history slots.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaRecord {
    pub track_id: Option<u64>,
    pub frame: usize,
    pub component: usize,
    /// `(T + 1) × width`, slot 0 is the current frame, slot `s` is `t − s`.
    pub features: Vec<f64>,
    pub mask: Vec<bool>,
    pub iou_adj: f64,
}

impl MetaRecord {
    /// Meta-classification label: `true` iff `IoU_adj = 0`.
    pub fn label(&self) -> bool {
        self.iou_adj == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaDataset {
    pub num_classes: usize,
    pub m: usize,
    pub history: usize,
    pub records: Vec<MetaRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub num_classes: usize,
    pub m: usize,
    pub history: usize,
    pub slot_width: usize,
    pub records: usize,
    pub feature_names: Vec<String>,
}

impl MetaDataset {
    pub fn slot_width(&self) -> usize {
        feature_count(self.num_classes, self.m)
    }

    pub fn slots(&self) -> usize {
        self.history + 1
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            num_classes: self.num_classes,
            m: self.m,
            history: self.history,
            slot_width: self.slot_width(),
            records: self.len(),
            feature_names: feature_names(self.num_classes, self.m),
        }
    }

    pub fn csv_columns(&self) -> Vec<String> {
        let names = feature_names(self.num_classes, self.m);
        let mut cols: Vec<String> = ["track_id", "frame", "component", "iou_adj", "label"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for s in 0..self.slots() {
            cols.extend(names.iter().map(|n| format!("{n}@t-{s}")));
        }
        cols.extend((0..self.slots()).map(|s| format!("mask@t-{s}")));
        cols
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<dataset csv>", e);
        writeln!(out, "{}", self.csv_columns().join(",")).map_err(io)?;
        for r in &self.records {
            let mut line = format!(
                "{},{},{},{},{}",
                opt(r.track_id),
                r.frame,
                r.component,
                r.iou_adj,
                r.label() as u8
            );
            for v in &r.features {
                line.push(',');
                line.push_str(&v.to_string());
            }
            for &b in &r.mask {
                line.push_str(if b { ",1" } else { ",0" });
            }
            writeln!(out, "{line}").map_err(io)?;
        }
        Ok(())
    }

    /// Reads a dataset written by [`MetaDataset::write_csv`] with its JSON
    /// header next to it.
    pub fn read(csv_path: impl AsRef<Path>, header_path: impl AsRef<Path>) -> Result<Self> {
        let (csv_path, header_path) = (csv_path.as_ref(), header_path.as_ref());
        let header_text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
        let header: DatasetHeader = serde_json::from_str(&header_text)?;
        let mut ds = MetaDataset {
            num_classes: header.num_classes,
            m: header.m,
            history: header.history,
            records: Vec::new(),
        };
        if header.slot_width != ds.slot_width() || header.feature_names != feature_names(ds.num_classes, ds.m) {
            return Err(Error::invalid("dataset header is inconsistent"));
        }
        let text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let bad = |message: String| Error::Tensor {
            path: csv_path.to_path_buf(),
            message,
        };
        let mut lines = text.lines();
        let cols = lines.next().ok_or_else(|| bad("empty file".into()))?;
        if cols.split(',').collect::<Vec<_>>() != ds.csv_columns() {
            return Err(bad("columns do not match the header document".into()));
        }
        let (slots, width) = (ds.slots(), ds.slot_width());
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 + slots * width + slots {
                return Err(bad(format!("line {}: wrong field count", i + 2)));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("line {}: bad number {s:?}", i + 2)))
            };
            let int = |s: &str| -> Result<u64> {
                s.parse::<u64>()
                    .map_err(|_| bad(format!("line {}: bad integer {s:?}", i + 2)))
            };
            ds.records.push(MetaRecord {
                track_id: if f[0].is_empty() { None } else { Some(int(f[0])?) },
                frame: int(f[1])? as usize,
                component: int(f[2])? as usize,
                iou_adj: num(f[3])?,
                features: f[5..5 + slots * width].iter().map(|s| num(s)).collect::<Result<_>>()?,
                mask: f[5 + slots * width..].iter().map(|s| *s == "1").collect(),
            });
        }
        if ds.records.len() != header.records {
            return Err(bad(format!(
                "header promises {} records, file has {}",
                header.records,
                ds.records.len()
            )));
        }
        Ok(ds)
    }
}

/// Builds time-series records for every segment with non-empty interior.
/// Slot `s` holds the features of the same track at frame `t − s`; when a
/// track has several segments in one frame (step-1 groups) the one nearest
/// the current segment's center is used.
pub fn build_time_series(table: &FeatureTable, history: usize) -> Result<MetaDataset> {
    if history > MAX_HISTORY {
        return Err(Error::Config(format!("history T = {history} exceeds {MAX_HISTORY}")));
    }
    let width = table.width();
    let mut by_track: HashMap<(u64, usize), Vec<usize>> = HashMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        if let Some(id) = r.track_id {
            by_track.entry((id, r.frame)).or_default().push(i);
        }
    }
    let center = |r: &FeatureRow| (r.features[CENTER_ROW_INDEX], r.features[CENTER_ROW_INDEX + 1]);
    // Among several same-track segments in a past frame, the one nearest the
    // current segment's center, then the larger, then the lower component.
    let pick = |current: &FeatureRow, candidates: &[usize]| -> usize {
        let (cr, cc) = center(current);
        let key = |i: usize| {
            let r = &table.rows[i];
            let (pr, pc) = center(r);
            ((pr - cr).powi(2) + (pc - cc).powi(2), -r.size(), r.component)
        };
        *candidates
            .iter()
            .min_by(|&&a, &&b| {
                let (ka, kb) = (key(a), key(b));
                ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2))
            })
            .expect("non-empty candidate list")
    };

    let mut records = Vec::new();
    for r in table.rows.iter().filter(|r| r.has_interior()) {
        let iou = r.iou_adj.ok_or_else(|| {
            Error::invalid(format!(
                "segment (frame {}, component {}) has no IoU_adj target; ground truth is required",
                r.frame, r.component
            ))
        })?;
        let mut features = vec![0.0; (history + 1) * width];
        let mut mask = vec![false; history + 1];
        features[..width].copy_from_slice(&r.features);
        mask[0] = true;
        if let Some(id) = r.track_id {
            for s in 1..=history {
                let Some(frame) = r.frame.checked_sub(s) else { break };
                if let Some(candidates) = by_track.get(&(id, frame)) {
                    let i = pick(r, candidates);
                    features[s * width..(s + 1) * width].copy_from_slice(&table.rows[i].features);
                    mask[s] = true;
                }
            }
        }
        records.push(MetaRecord {
            track_id: r.track_id,
            frame: r.frame,
            component: r.component,
            features,
            mask,
            iou_adj: iou,
        });
    }
    Ok(MetaDataset {
        num_classes: table.num_classes,
        m: table.m,
        history,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    /// Records drawn per run; `None` uses every record.
    pub sample_size: Option<usize>,
    pub runs: usize,
    pub base_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: [0.7, 0.1, 0.2],
            sample_size: None,
            runs: 10,
            base_seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || (self.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!("split fractions {:?} must sum to 1", self.fractions)));
        }
        if self.runs < 1 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn seed_for(&self, run: usize) -> u64 {
        self.base_seed ^ (run as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Indices into the dataset for one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws `sample_size` records (all when unset) with a seed derived from
/// `(base_seed, run)` and cuts them by the split fractions.
pub fn split(num_records: usize, spec: &SplitSpec, run: usize) -> Result<Split> {
    spec.validate()?;
    let n = spec.sample_size.unwrap_or(num_records);
    if n > num_records || n == 0 {
        return Err(Error::InsufficientRecords {
            needed: n.max(1),
            available: num_records,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed_for(run));
    let mut idx: Vec<usize> = (0..num_records).collect();
    idx.shuffle(&mut rng);
    idx.truncate(n);
    let n_train = (spec.fractions[0] * n as f64).round() as usize;
    let n_val = ((spec.fractions[1] * n as f64).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Split {
        train: idx,
        val,
        test,
    })
}

/// Per-column z-scoring fitted on training records. Columns are the
/// flattened `(slot, feature)` pairs; statistics only use slots that are
/// present and absent slots stay zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub slots: usize,
    pub width: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(records: &[&MetaRecord], slots: usize, width: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("cannot standardize with an empty training set"));
        }
        let cols = slots * width;
        let mut sum = vec![0.0; cols];
        let mut count = vec![0usize; cols];
        for r in records {
            for s in 0..slots {
                if r.mask[s] {
                    for f in 0..width {
                        sum[s * width + f] += r.features[s * width + f];
                        count[s * width + f] += 1;
                    }
                }
            }
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let mut var = vec![0.0; cols];
        for r in records {
            for s in 0..slots {
                if r.mask[s] {
                    for f in 0..width {
                        let k = s * width + f;
                        var[k] += (r.features[k] - mean[k]).powi(2);
                    }
                }
            }
        }
        let std = var
            .iter()
            .zip(&count)
            .map(|(v, &c)| if c > 0 { (v / c as f64).sqrt() } else { 0.0 })
            .collect();
        Ok(Self {
            slots,
            width,
            mean,
            std,
        })
    }

    pub fn transform(&self, record: &MetaRecord) -> MetaRecord {
        let mut out = record.clone();
        for s in 0..self.slots {
            for f in 0..self.width {
                let k = s * self.width + f;
                out.features[k] = if !record.mask[s] || self.std[k] == 0.0 {
                    0.0
                } else {
                    (record.features[k] - self.mean[k]) / self.std[k]
                };
            }
        }
        out
    }
}

/// Standardized copies of the three subsets, all with train statistics.
pub struct StandardizedSplit {
    pub train: Vec<MetaRecord>,
    pub val: Vec<MetaRecord>,
    pub test: Vec<MetaRecord>,
    pub standardizer: Standardizer,
}

pub fn standardize(dataset: &MetaDataset, split: &Split) -> Result<StandardizedSplit> {
    let pick = |idx: &[usize]| idx.iter().map(|&i| &dataset.records[i]).collect::<Vec<_>>();
    let train = pick(&split.train);
    let standardizer = Standardizer::fit(&train, dataset.slots(), dataset.slot_width())?;
    let apply = |rs: Vec<&MetaRecord>| rs.into_iter().map(|r| standardizer.transform(r)).collect();
    Ok(StandardizedSplit {
        train: apply(train),
        val: apply(pick(&split.val)),
        test: apply(pick(&split.test)),
        standardizer,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    fn row(frame: usize, component: usize, track: Option<u64>, size_in: f64, value: f64) -> FeatureRow {
        let mut features = vec![value; feature_count(2, 0)];
        features[0] = 10.0;
        features[1] = size_in;
        FeatureRow {
            frame,
            component,
            class_id: 1,
            track_id: track,
            iou_adj: Some(0.5),
            features,
        }
    }

    fn table(rows: Vec<FeatureRow>) -> FeatureTable {
        FeatureTable {
            num_classes: 2,
            m: 0,
            rows,
        }
    }

    #[test]
    fn no_history() {
        let ds = build_time_series(&table(vec![row(0, 0, Some(1), 2.0, 0.3)]), 0).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.records[0].features, ds.records[0].features[..24].to_vec());
        assert_eq!(ds.records[0].mask, vec![true]);
    }

    #[test]
    fn short_track_mask() {
        let rows = (0..3).map(|t| row(t, 0, Some(7), 2.0, t as f64)).collect();
        let ds = build_time_series(&table(rows), 5).unwrap();
        let last = ds.records.iter().find(|r| r.frame == 2).unwrap();
        assert_eq!(last.mask, vec![true, true, true, false, false, false]);
        assert_eq!(last.features.len(), 6 * 24);
        assert_eq!(last.features[24 + 2], 1.0);
        assert!(last.features[3 * 24..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_video_history_equals_current() {
        let rows = (0..6).map(|t| row(t, 0, Some(3), 2.0, 0.25)).collect();
        let ds = build_time_series(&table(rows), 3).unwrap();
        for r in ds.records.iter().filter(|r| r.frame >= 3) {
            assert!(r.mask.iter().all(|&b| b));
            for s in 1..4 {
                assert_eq!(r.features[s * 24..(s + 1) * 24], r.features[..24]);
            }
        }
    }

    #[test]
    fn empty_interior_is_excluded() {
        let ds = build_time_series(&table(vec![row(0, 0, None, 0.0, 0.1), row(0, 1, None, 3.0, 0.1)]), 2).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.records[0].component, 1);
        assert!(build_time_series(&table(vec![]), MAX_HISTORY + 1).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let spec = SplitSpec {
            base_seed: 5,
            ..Default::default()
        };
        let s = split(1000, &spec, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (700, 100, 200));
        assert_eq!(s, split(1000, &spec, 0).unwrap());
        assert_ne!(s, split(1000, &spec, 1).unwrap());
        let all: HashSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        assert_eq!(all.len(), 1000);

        let sampled = SplitSpec {
            sample_size: Some(500),
            ..spec.clone()
        };
        let s = split(1000, &sampled, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (350, 50, 100));
        assert!(matches!(
            split(100, &sampled, 0),
            Err(Error::InsufficientRecords { .. })
        ));
    }

    fn rec(values: &[f64]) -> MetaRecord {
        MetaRecord {
            track_id: None,
            frame: 0,
            component: 0,
            features: values.to_vec(),
            mask: vec![true],
            iou_adj: 0.5,
        }
    }

    #[test]
    fn standardize_examples() {
        let train = [rec(&[2.0, 7.0]), rec(&[4.0, 7.0])];
        let st = Standardizer::fit(&train.iter().collect::<Vec<_>>(), 1, 2).unwrap();
        assert_eq!(st.mean, vec![3.0, 7.0]);
        assert_eq!(st.std, vec![1.0, 0.0]);
        assert_eq!(st.transform(&train[0]).features, vec![-1.0, 0.0]);
        assert_eq!(st.transform(&train[1]).features, vec![1.0, 0.0]);
        // Test rows use train statistics, not their own.
        assert_eq!(st.transform(&rec(&[13.0, 100.0])).features, vec![10.0, 0.0]);
        assert!(Standardizer::fit(&[], 1, 2).is_err());
    }

    #[test]
    fn masked_slots_stay_zero() {
        let mut a = MetaRecord {
            mask: vec![true, false],
            ..rec(&[1.0, 0.0])
        };
        let b = MetaRecord {
            mask: vec![true, true],
            ..rec(&[3.0, 10.0])
        };
        let st = Standardizer::fit(&[&a, &b], 2, 1).unwrap();
        assert_eq!(st.mean, vec![2.0, 10.0]);
        a = st.transform(&a);
        assert_eq!(a.features, vec![-1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 10usize..400, seed in 0u64..50, run in 0usize..10) {
            let spec = SplitSpec { base_seed: seed, ..Default::default() };
            let s = split(n, &spec, run).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
