//! Deterministic synthetic prediction streams.
//!
//! Moving rectangles and ellipses over a background class make the ground
//! truth. The "prediction" is that ground truth after per-object error
//! events: a class flip (the object's predicted segment then has
//! `IoU_adj = 0`), a boundary shift, or a one-frame dropout. Softmax
//! confidence is lowered on flipped objects and their cell states get larger
//! block-to-block perturbations, so both dispersion and stability features
//! carry signal about errors.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmaps::LabelFrame;
use crate::segmentation::NEIGHBOURS;
use crate::tensor_io::{labels_to_tensor, write_manifest, write_tensor, FrameEntry, FrameTensor, ManifestDocument};

/// Fraction of the confidence scale at which the predicted class sits on a
/// boundary pixel; the neighbouring class gets the rest of the falloff.
const BOUNDARY_FLOOR: f64 = 0.5;
/// Share of the confidence scale left on the true class of a flipped object.
const TRUE_CLASS_SHARE: f64 = 0.35;
const BACKGROUND_KAPPA: f64 = 5.0;
const BACKGROUND_AMP: f64 = 0.7;
const ERROR_AMP_BOOST: f64 = 2.5;
const AR_RHO: f64 = 0.7;
const DISTANCE_CAP: u8 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub num_blocks: usize,
    pub num_frames: usize,
    pub num_objects: usize,
    /// Speed range in px per frame.
    pub velocity: [f64; 2],
    /// Chance per object and frame that its predicted class is flipped.
    pub p_err: f64,
    /// Maximum boundary shift in px per object and frame.
    pub jitter: f64,
    /// Chance per object and frame that it vanishes from the prediction.
    pub flash: f64,
    /// Relative per-frame variation of an object's confidence.
    pub confidence_jitter: f64,
    /// Per-pixel noise on non-predicted logits, relative to confidence.
    pub logit_noise: f64,
    pub cell_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 128,
            num_classes: 5,
            num_blocks: 10,
            num_frames: 250,
            num_objects: 10,
            velocity: [0.5, 2.0],
            p_err: 0.15,
            jitter: 1.0,
            flash: 0.05,
            confidence_jitter: 0.1,
            logit_noise: 0.15,
            cell_noise: 0.1,
            seed: 42,
        }
    }
}

impl SynthConfig {
    /// No error events, no motion, no noise.
    pub fn clean_stationary(self) -> Self {
        Self {
            velocity: [0.0, 0.0],
            p_err: 0.0,
            jitter: 0.0,
            flash: 0.0,
            confidence_jitter: 0.0,
            logit_noise: 0.0,
            cell_noise: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.height < 4 || self.width < 4 {
            return bad("height and width must be at least 4");
        }
        if self.num_classes < 3 {
            return bad("num_classes must be at least 3 (background plus two object classes)");
        }
        if self.num_blocks < 2 {
            return bad("num_blocks must be at least 2");
        }
        if self.num_frames == 0 {
            return bad("num_frames must be positive");
        }
        for (name, p) in [("p_err", self.p_err), ("flash", self.flash)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.velocity[0] >= 0.0 && self.velocity[1] >= self.velocity[0]) {
            return bad("velocity range must satisfy 0 <= lo <= hi");
        }
        for (name, v) in [
            ("jitter", self.jitter),
            ("confidence_jitter", self.confidence_jitter),
            ("logit_noise", self.logit_noise),
            ("cell_noise", self.cell_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        if self.confidence_jitter >= 1.0 || self.logit_noise >= BOUNDARY_FLOOR - TRUE_CLASS_SHARE {
            return bad("confidence_jitter must be < 1 and logit_noise < 0.15 so the predicted class stays the argmax");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone)]
struct Object {
    class: u16,
    shape: Shape,
    half: (f64, f64),
    pos: (f64, f64),
    vel: (f64, f64),
    kappa: f64,
    amp: f64,
}

impl Object {
    fn covers(&self, r: f64, c: f64, offset: (f64, f64)) -> bool {
        let dr = (r - self.pos.0 - offset.0) / self.half.0;
        let dc = (c - self.pos.1 - offset.1) / self.half.1;
        match self.shape {
            Shape::Rectangle => dr.abs() <= 1.0 && dc.abs() <= 1.0,
            Shape::Ellipse => dr * dr + dc * dc <= 1.0,
        }
    }

    fn bbox(&self, offset: (f64, f64), pad: f64, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let r0 = (self.pos.0 + offset.0 - self.half.0 - pad).floor().max(0.0) as usize;
        let r1 = ((self.pos.0 + offset.0 + self.half.0 + pad).ceil().max(0.0) as usize).min(h - 1);
        let c0 = (self.pos.1 + offset.1 - self.half.1 - pad).floor().max(0.0) as usize;
        let c1 = ((self.pos.1 + offset.1 + self.half.1 + pad).ceil().max(0.0) as usize).min(w - 1);
        (r0, r1, c0, c1)
    }

    fn step(&mut self, h: usize, w: usize) {
        self.pos.0 += self.vel.0;
        self.pos.1 += self.vel.1;
        let (hi_r, hi_c) = ((h - 1) as f64, (w - 1) as f64);
        if self.pos.0 < 0.0 || self.pos.0 > hi_r {
            self.vel.0 = -self.vel.0;
            self.pos.0 = self.pos.0.clamp(0.0, hi_r);
        }
        if self.pos.1 < 0.0 || self.pos.1 > hi_c {
            self.vel.1 = -self.vel.1;
            self.pos.1 = self.pos.1.clamp(0.0, hi_c);
        }
    }
}

/// What happened to one object in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectEvent {
    pub object: usize,
    pub class: u16,
    /// `None` when the object was dropped from the prediction.
    pub predicted_class: Option<u16>,
    pub erroneous: bool,
}

#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub ground_truth: LabelFrame,
    pub predicted: LabelFrame,
    /// `(height, width, num_classes)` row-major.
    pub softmax: Vec<f64>,
    /// `(height, width, num_blocks)` mean cell states.
    pub cell_states: Vec<f64>,
    pub events: Vec<ObjectEvent>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn spawn(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Object {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let class = rng.random_range(1..cfg.num_classes as u16);
    let shape = if rng.random::<bool>() { Shape::Rectangle } else { Shape::Ellipse };
    let half = (uniform(rng, 3.0, (h / 8.0).max(3.0)), uniform(rng, 3.0, (w / 8.0).max(3.0)));
    let pos = (uniform(rng, 0.0, h - 1.0), uniform(rng, 0.0, w - 1.0));
    let speed = uniform(rng, cfg.velocity[0], cfg.velocity[1]);
    let angle = uniform(rng, 0.0, 2.0 * PI);
    Object {
        class,
        shape,
        half,
        pos,
        vel: (speed * angle.sin(), speed * angle.cos()),
        kappa: uniform(rng, 2.5, 6.0),
        amp: uniform(rng, 0.5, 1.5),
    }
}

/// Generates every frame in memory.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthFrame>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut objects: Vec<Object> = (0..cfg.num_objects).map(|_| spawn(cfg, &mut rng)).collect();
    let mut frames = Vec::with_capacity(cfg.num_frames);
    for t in 0..cfg.num_frames {
        if t > 0 {
            for o in &mut objects {
                o.step(cfg.height, cfg.width);
            }
        }
        frames.push(render(cfg, &objects, &mut rng)?);
    }
    Ok(frames)
}

struct Draw {
    erroneous: bool,
    flashed: bool,
    offset: (f64, f64),
    kappa: f64,
    predicted_class: u16,
}

fn render(cfg: &SynthConfig, objects: &[Object], rng: &mut ChaCha8Rng) -> Result<SynthFrame> {
    let (h, w, c, l) = (cfg.height, cfg.width, cfg.num_classes, cfg.num_blocks);
    let n = h * w;

    // Ground truth: later objects are drawn on top.
    let mut gt_obj = vec![usize::MAX; n];
    paint(objects, &mut gt_obj, h, w, |_| Some((0.0, 0.0)));

    // Per-object events, drawn in a fixed order.
    let mut draws: Vec<Draw> = objects
        .iter()
        .map(|o| {
            let erroneous = rng.random::<f64>() < cfg.p_err;
            let flashed = rng.random::<f64>() < cfg.flash;
            let offset = (
                uniform(rng, -cfg.jitter, cfg.jitter).round(),
                uniform(rng, -cfg.jitter, cfg.jitter).round(),
            );
            let kappa = if erroneous {
                o.kappa * uniform(rng, 0.45, 0.9)
            } else {
                o.kappa * (1.0 + uniform(rng, -cfg.confidence_jitter, cfg.confidence_jitter))
            };
            Draw {
                erroneous: erroneous && !flashed,
                flashed,
                offset,
                kappa,
                predicted_class: o.class,
            }
        })
        .collect();

    // A flipped object takes a class no nearby object has, so its predicted
    // segment cannot touch ground truth of the same class.
    let pad = 2.0 * cfg.jitter + 2.0;
    for i in 0..objects.len() {
        if !draws[i].erroneous {
            continue;
        }
        let (a0, a1, b0, b1) = objects[i].bbox((0.0, 0.0), pad, h, w);
        let mut banned = vec![false; c];
        banned[0] = true;
        banned[objects[i].class as usize] = true;
        for (j, o) in objects.iter().enumerate() {
            if j == i {
                continue;
            }
            let (r0, r1, c0, c1) = o.bbox((0.0, 0.0), pad, h, w);
            if r0 <= a1 && a0 <= r1 && c0 <= b1 && b0 <= c1 {
                banned[o.class as usize] = true;
                if draws[j].erroneous && j < i {
                    banned[draws[j].predicted_class as usize] = true;
                }
            }
        }
        let allowed: Vec<u16> = (1..c as u16).filter(|&k| !banned[k as usize]).collect();
        let pick = rng.random_range(0..c - 1);
        draws[i].predicted_class = if allowed.is_empty() {
            (1..c as u16).filter(|&k| k != objects[i].class).nth(pick % (c - 2)).unwrap_or(objects[i].class)
        } else {
            allowed[pick % allowed.len()]
        };
    }

    let mut pred_obj = vec![usize::MAX; n];
    paint(objects, &mut pred_obj, h, w, |i| (!draws[i].flashed).then_some(draws[i].offset));

    let gt_labels: Vec<u16> = gt_obj.iter().map(|&o| if o == usize::MAX { 0 } else { objects[o].class }).collect();
    let pred_labels: Vec<u16> = pred_obj
        .iter()
        .map(|&o| if o == usize::MAX { 0 } else { draws[o].predicted_class })
        .collect();

    let (dist, nb) = boundary_distance(&pred_labels, h, w);
    let mut softmax = vec![0.0; n * c];
    let mut logits = vec![0.0; c];
    for z in 0..n {
        let o = pred_obj[z];
        let kappa = if o == usize::MAX { BACKGROUND_KAPPA } else { draws[o].kappa };
        for v in logits.iter_mut() {
            *v = if cfg.logit_noise > 0.0 { kappa * cfg.logit_noise * rng.random::<f64>() } else { 0.0 };
        }
        let wgt = 1.0 / (1.0 + (-2.0 * (dist[z] as f64 - 1.0)).exp());
        let p = pred_labels[z] as usize;
        if let Some(k) = nb[z] {
            let k = k as usize;
            logits[k] = logits[k].max(kappa * BOUNDARY_FLOOR * (1.0 - wgt));
        }
        if o != usize::MAX && draws[o].erroneous {
            let k = objects[o].class as usize;
            logits[k] = logits[k].max(kappa * TRUE_CLASS_SHARE);
        }
        logits[p] = kappa * (BOUNDARY_FLOOR + (1.0 - BOUNDARY_FLOOR) * wgt);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (k, v) in logits.iter().enumerate() {
            let e = (v - max).exp();
            softmax[z * c + k] = e;
            sum += e;
        }
        for k in 0..c {
            softmax[z * c + k] /= sum;
        }
    }

    // Block 1 is a smooth scene signal; later blocks drift from it by an
    // AR(1) process whose step size is larger on erroneous objects.
    let mut cells = vec![0.0; n * l];
    for z in 0..n {
        let (r, col) = ((z / w) as f64, (z % w) as f64);
        let base = 0.1 * pred_labels[z] as f64 + 0.05 * (2.0 * PI * col / 32.0).sin() * (2.0 * PI * r / 24.0).cos();
        let o = pred_obj[z];
        let amp = cfg.cell_noise
            * match o {
                usize::MAX => BACKGROUND_AMP,
                o if draws[o].erroneous => objects[o].amp * ERROR_AMP_BOOST,
                o => objects[o].amp,
            };
        cells[z * l] = base;
        let mut e = 0.0;
        for j in 1..l {
            if amp > 0.0 {
                let eps: f64 = StandardNormal.sample(rng);
                e = AR_RHO * e + amp * eps;
            }
            cells[z * l + j] = base + e;
        }
    }

    let events = objects
        .iter()
        .enumerate()
        .map(|(i, o)| ObjectEvent {
            object: i,
            class: o.class,
            predicted_class: (!draws[i].flashed).then_some(draws[i].predicted_class),
            erroneous: draws[i].erroneous,
        })
        .collect();

    Ok(SynthFrame {
        ground_truth: LabelFrame::new(h, w, c, gt_labels)?,
        predicted: LabelFrame::new(h, w, c, pred_labels)?,
        softmax,
        cell_states: cells,
        events,
    })
}

fn paint(objects: &[Object], map: &mut [usize], h: usize, w: usize, offset: impl Fn(usize) -> Option<(f64, f64)>) {
    for (i, o) in objects.iter().enumerate() {
        let Some(off) = offset(i) else { continue };
        let (r0, r1, c0, c1) = o.bbox(off, 0.0, h, w);
        for r in r0..=r1 {
            for c in c0..=c1 {
                if o.covers(r as f64, c as f64, off) {
                    map[r * w + c] = i;
                }
            }
        }
    }
}

/// Chessboard distance to the nearest pixel of another class, capped, and
/// that class. Pixels beyond the cap get no neighbour class.
fn boundary_distance(labels: &[u16], h: usize, w: usize) -> (Vec<u8>, Vec<Option<u16>>) {
    let n = h * w;
    let mut dist = vec![DISTANCE_CAP; n];
    let mut nb = vec![None; n];
    let mut queue = VecDeque::new();
    let neighbours = |z: usize| {
        let (r, c) = ((z / w) as isize, (z % w) as isize);
        NEIGHBOURS.iter().filter_map(move |(dr, dc)| {
            let (nr, nc) = (r + dr, c + dc);
            (nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w).then(|| nr as usize * w + nc as usize)
        })
    };
    for z in 0..n {
        if let Some(k) = neighbours(z).find(|&k| labels[k] != labels[z]) {
            dist[z] = 0;
            nb[z] = Some(labels[k]);
            queue.push_back(z);
        }
    }
    while let Some(z) = queue.pop_front() {
        if dist[z] + 1 >= DISTANCE_CAP {
            continue;
        }
        for k in neighbours(z) {
            if labels[k] == labels[z] && dist[k] > dist[z] + 1 {
                dist[k] = dist[z] + 1;
                nb[k] = nb[z];
                queue.push_back(k);
            }
        }
    }
    (dist, nb)
}

/// Writes all frames as tensors plus `manifest.json` into `dir` and returns
/// the manifest path.
pub fn write_stream(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let frames = generate(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (cfg.height, cfg.width);
    let mut entries = Vec::with_capacity(frames.len());
    for (t, f) in frames.iter().enumerate() {
        let softmax = format!("frame_{t:05}_softmax.tmsg");
        let cells = format!("frame_{t:05}_cells.tmsg");
        let gt = format!("frame_{t:05}_gt.tmsg");
        let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        write_tensor(dir.join(&softmax), &FrameTensor::new(&[h, w, cfg.num_classes], to32(&f.softmax))?)?;
        write_tensor(dir.join(&cells), &FrameTensor::new(&[h, w, cfg.num_blocks], to32(&f.cell_states))?)?;
        write_tensor(dir.join(&gt), &labels_to_tensor(&f.ground_truth))?;
        entries.push(FrameEntry {
            softmax,
            cell_states: Some(cells),
            cell_state_blocks: None,
            ground_truth: Some(gt),
        });
    }
    let doc = ManifestDocument {
        height: h,
        width: w,
        num_classes: cfg.num_classes,
        num_blocks: cfg.num_blocks,
        num_frames: cfg.num_frames,
        class_names: Some(
            std::iter::once("background".to_string())
                .chain((1..cfg.num_classes).map(|k| format!("object_{k}")))
                .collect(),
        ),
        frames: entries,
    };
    let path = dir.join("manifest.json");
    write_manifest(&path, &doc)?;
    Ok(path)
}
