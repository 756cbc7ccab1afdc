//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segmeta::dataset::SplitSpec;
use segmeta::evaluation::{auroc, auroc_sweep, naive_baseline_accuracy, run_experiment, ExperimentConfig, Metric, RowKind};
use segmeta::heatmaps::{dispersion_heatmaps, LabelFrame, SoftmaxFrame};
use segmeta::meta_models::{Family, LstmNet, Mlp, ModelSpec, Samples, Task};
use segmeta::pipeline::{extract_stream, feature_table, track_extractions, ExtractConfig};
use segmeta::seg_metrics::{aggregate_heatmap, feature_count, feature_names, iou_adj, mean_class_probs};
use segmeta::segmentation::{connected_components, geometric_center, Segment};
use segmeta::synth::{generate, write_stream, SynthConfig};
use segmeta::tensor_io::read_manifest;
use segmeta::tracking::{overlap, track_sequence, MatchStep, TrackState, TrackingParams};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Independent oracles

fn oracle_entropy(p: &[f64]) -> f64 {
    let mut s = 0.0;
    for &q in p {
        if q > 0.0 {
            s -= q * q.ln();
        }
    }
    s / (p.len() as f64).ln()
}

fn oracle_vr(p: &[f64]) -> f64 {
    1.0 - p.iter().cloned().fold(f64::MIN, f64::max)
}

fn oracle_margin(p: &[f64]) -> f64 {
    let mut s = p.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    1.0 - s[0] + s[1]
}

/// Union-find 8-connected labelling; returns a component id per pixel.
fn oracle_components(labels: &[u16], h: usize, w: usize) -> Vec<usize> {
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let n = p[y];
            p[y] = r;
            y = n;
        }
        r
    }
    let mut parent: Vec<usize> = (0..h * w).collect();
    for r in 0..h {
        for c in 0..w {
            for (dr, dc) in [(0isize, 1isize), (1, -1), (1, 0), (1, 1)] {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr as usize >= h || nc as usize >= w {
                    continue;
                }
                let (a, b) = (r * w + c, nr as usize * w + nc as usize);
                if labels[a] == labels[b] {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
    }
    (0..h * w).map(|z| find(&mut parent, z)).collect()
}

fn oracle_inner(pixels: &HashSet<usize>, h: usize, w: usize) -> HashSet<usize> {
    pixels
        .iter()
        .copied()
        .filter(|&z| {
            let (r, c) = (z / w, z % w);
            if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                return false;
            }
            (-1isize..=1).all(|dr| {
                (-1isize..=1).all(|dc| pixels.contains(&((r as isize + dr) as usize * w + (c as isize + dc) as usize)))
            })
        })
        .collect()
}

fn mean_of(set: &HashSet<usize>, v: &[f64]) -> f64 {
    if set.is_empty() {
        0.0
    } else {
        set.iter().map(|&z| v[z]).sum::<f64>() / set.len() as f64
    }
}

fn oracle_iou_adj(seg: &HashSet<usize>, class: u16, gt: &[u16], gt_comp: &[usize]) -> f64 {
    let hit: HashSet<usize> = seg.iter().filter(|&&z| gt[z] == class).map(|&z| gt_comp[z]).collect();
    if hit.is_empty() {
        return 0.0;
    }
    let q: HashSet<usize> = (0..gt.len()).filter(|&z| gt[z] == class && hit.contains(&gt_comp[z])).collect();
    seg.intersection(&q).count() as f64 / seg.union(&q).count() as f64
}

fn plain_iou(seg: &HashSet<usize>, class: u16, gt: &[u16]) -> f64 {
    let g: HashSet<usize> = (0..gt.len()).filter(|&z| gt[z] == class).collect();
    let u = seg.union(&g).count();
    if u == 0 {
        0.0
    } else {
        seg.intersection(&g).count() as f64 / u as f64
    }
}

// ---------------------------------------------------------------------------
// Random fixtures

/// Blocky class field: every 8×8 tile has a dominant class, single pixels
/// deviate, so segments range from single pixels to large areas.
fn blocky_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Vec<u16> {
    let tiles: Vec<u16> = (0..h.div_ceil(8) * w.div_ceil(8)).map(|_| rng.random_range(0..c as u16)).collect();
    (0..h * w)
        .map(|z| {
            if rng.random::<f64>() < 0.08 {
                rng.random_range(0..c as u16)
            } else {
                tiles[(z / w / 8) * w.div_ceil(8) + (z % w) / 8]
            }
        })
        .collect()
}

struct RandomFrame {
    c: usize,
    probs: Vec<f64>,
    one_hot: Vec<bool>,
}

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RandomFrame {
    let c = rng.random_range(2..=6usize);
    let lead = blocky_labels(rng, h, w, c);
    let mut probs = Vec::with_capacity(h * w * c);
    let mut one_hot = vec![false; h * w];
    for z in 0..h * w {
        let u: f64 = rng.random();
        if u < 0.1 {
            one_hot[z] = true;
            probs.extend((0..c).map(|k| if k == lead[z] as usize { 1.0 } else { 0.0 }));
        } else if u < 0.15 {
            probs.extend(std::iter::repeat_n(1.0 / c as f64, c));
        } else {
            let raw: Vec<f64> = (0..c)
                .map(|k| {
                    let e = -rng.random::<f64>().max(1e-300).ln();
                    if k == lead[z] as usize {
                        e + 1.5
                    } else {
                        e
                    }
                })
                .collect();
            let s: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| v / s));
        }
    }
    RandomFrame { c, probs, one_hot }
}

// ---------------------------------------------------------------------------
// Criteria

fn criterion_1() -> Outcome {
    let a = naive_baseline_accuracy(110_739, 7_649) * 100.0;
    let b = naive_baseline_accuracy(113_286, 5_622) * 100.0;
    ensure((a - 93.09).abs() <= 0.01, || format!("weak model {a:.4}% != 93.09%"))?;
    ensure((b - 95.04).abs() <= 0.01, || format!("strong model {b:.4}% != 95.04%"))?;
    Ok(format!("{a:.4}% / {b:.4}%"))
}

struct FormulaStats {
    checks: usize,
    max_err: f64,
}

impl FormulaStats {
    fn cmp(&mut self, what: &str, got: f64, want: f64) -> Result<(), String> {
        self.checks += 1;
        let e = (got - want).abs();
        self.max_err = self.max_err.max(e);
        ensure(e <= 1e-9, || format!("{what}: got {got}, oracle {want}"))
    }
}

fn criterion_2() -> Outcome {
    let (h, w) = (32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut st = FormulaStats { checks: 0, max_err: 0.0 };
    let mut prev: Option<Vec<Segment>> = None;
    for frame in 0..100 {
        let rf = random_frame(&mut rng, h, w);
        let c = rf.c;
        let sm = SoftmaxFrame::new(h, w, c, rf.probs.clone()).map_err(|e| e.to_string())?;
        let d = dispersion_heatmaps(&sm);
        let mut e_or = vec![0.0; h * w];
        for z in 0..h * w {
            let p = &rf.probs[z * c..(z + 1) * c];
            e_or[z] = oracle_entropy(p);
            st.cmp("entropy", d.entropy.values[z], e_or[z])?;
            st.cmp("variation ratio", d.variation_ratio.values[z], oracle_vr(p))?;
            st.cmp("probability margin", d.probability_margin.values[z], oracle_margin(p))?;
        }

        // Argmax with lowest index on ties.
        let labels: Vec<u16> = (0..h * w)
            .map(|z| {
                let p = &rf.probs[z * c..(z + 1) * c];
                let mut best = 0;
                for k in 1..c {
                    if p[k] > p[best] {
                        best = k;
                    }
                }
                best as u16
            })
            .collect();
        let lf = LabelFrame::new(h, w, c, labels.clone()).map_err(|e| e.to_string())?;
        let segs = connected_components(&lf, frame).segments;
        let comp = oracle_components(&labels, h, w);
        let distinct: HashSet<usize> = comp.iter().copied().collect();
        ensure(distinct.len() == segs.len(), || format!("frame {frame}: {} segments vs oracle {}", segs.len(), distinct.len()))?;

        let gt = blocky_labels(&mut rng, h, w, c);
        let gt_comp = oracle_components(&gt, h, w);
        let gt_lf = LabelFrame::new(h, w, c, gt.clone()).map_err(|e| e.to_string())?;

        for s in &segs {
            let px: HashSet<usize> = s.pixels.iter().map(|&z| z as usize).collect();
            let root = comp[s.pixels[0] as usize];
            ensure(px.iter().all(|&z| comp[z] == root) && comp.iter().filter(|&&r| r == root).count() == px.len(), || {
                format!("frame {frame}: segment {} differs from oracle component", s.component)
            })?;
            let inner = oracle_inner(&px, h, w);
            let bd: HashSet<usize> = px.difference(&inner).copied().collect();
            let a = aggregate_heatmap(s, &d.entropy);
            let (mean, mean_in, mean_bd) = (mean_of(&px, &e_or), mean_of(&inner, &e_or), mean_of(&bd, &e_or));
            st.cmp("mean", a.mean, mean)?;
            st.cmp("mean_in", a.mean_in, mean_in)?;
            st.cmp("mean_bd", a.mean_bd, mean_bd)?;
            st.cmp("rel", a.rel, mean * px.len() as f64 / bd.len() as f64)?;
            st.cmp("rel_in", a.rel_in, mean_in * inner.len() as f64 / bd.len() as f64)?;

            let probs = mean_class_probs(s, &sm);
            for y in 0..c {
                let want = px.iter().map(|&z| rf.probs[z * c + y]).sum::<f64>() / px.len() as f64;
                st.cmp("mean class prob", probs[y], want)?;
            }

            let (cr, cc) = geometric_center(&s.pixels, w);
            st.cmp("center row", cr, px.iter().map(|&z| (z / w) as f64).sum::<f64>() / px.len() as f64)?;
            st.cmp("center col", cc, px.iter().map(|&z| (z % w) as f64).sum::<f64>() / px.len() as f64)?;

            st.cmp("iou_adj", iou_adj(s, &gt_lf), oracle_iou_adj(&px, s.class_id, &gt, &gt_comp))?;

            if let Some(p) = &prev {
                for j in p.iter().take(8) {
                    let jp: HashSet<usize> = j.pixels.iter().map(|&z| z as usize).collect();
                    let want = jp.intersection(&px).count() as f64 / jp.len() as f64;
                    let got = overlap(&j.pixels, &s.pixels).map_err(|e| e.to_string())?;
                    st.cmp("overlap", got, want)?;
                }
            }
        }
        prev = Some(segs);
    }
    Ok(format!("{} comparisons, max abs error {:.2e}", st.checks, st.max_err))
}

fn criterion_3() -> Outcome {
    let (h, w) = (32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut pixels = 0usize;
    let mut pairs = 0usize;
    while pairs < 1000 {
        let rf = random_frame(&mut rng, h, w);
        let c = rf.c;
        let sm = SoftmaxFrame::new(h, w, c, rf.probs.clone()).map_err(|e| e.to_string())?;
        let d = dispersion_heatmaps(&sm);
        for z in 0..h * w {
            let (e, v, m) = (d.entropy.values[z], d.variation_ratio.values[z], d.probability_margin.values[z]);
            ensure([e, v, m].iter().all(|x| (0.0..=1.0).contains(x)), || format!("E/V/M out of range at {z}: {e} {v} {m}"))?;
            ensure(m >= v, || format!("M < V at {z}: {m} < {v}"))?;
            if rf.one_hot[z] {
                ensure(e == 0.0 && v == 0.0 && m == 0.0, || format!("one-hot pixel {z} gives {e} {v} {m}"))?;
            }
            pixels += 1;
        }
        let labels = segmeta::heatmaps::predicted_labels(&sm);
        let segs = connected_components(&labels, 0).segments;
        let gt = blocky_labels(&mut rng, h, w, c);
        let gt_lf = LabelFrame::new(h, w, c, gt.clone()).map_err(|e| e.to_string())?;
        for s in &segs {
            let total: f64 = mean_class_probs(s, &sm).iter().sum();
            ensure((total - 1.0).abs() <= 1e-5, || format!("class probs sum to {total}"))?;
            if pairs < 1000 {
                let px: HashSet<usize> = s.pixels.iter().map(|&z| z as usize).collect();
                let adj = iou_adj(s, &gt_lf);
                let plain = plain_iou(&px, s.class_id, &gt);
                ensure((0.0..=1.0).contains(&adj), || format!("iou_adj {adj} out of range"))?;
                ensure(adj >= plain - 1e-15, || format!("iou_adj {adj} < plain IoU {plain}"))?;
                pairs += 1;
            }
        }
    }
    Ok(format!("{pixels} pixels, {pairs} segment/GT pairs"))
}

fn rect_frame(h: usize, w: usize, rects: &[(u16, usize, usize, usize, usize)], t: usize) -> Vec<Segment> {
    let mut labels = vec![0u16; h * w];
    for &(class, r0, c0, rh, cw) in rects {
        for r in r0..r0 + rh {
            for c in c0..c0 + cw {
                labels[r * w + c] = class;
            }
        }
    }
    connected_components(&LabelFrame::new(h, w, 3, labels).unwrap(), t).segments
}

fn object_assignment(
    state: &mut TrackState,
    t: usize,
    segs: &[Segment],
) -> Result<Option<segmeta::tracking::TrackAssignment>, String> {
    let a = state.track_frame(t, segs, &TrackingParams::default()).map_err(|e| e.to_string())?;
    Ok(segs.iter().position(|s| s.class_id == 1).map(|i| a[i]))
}

fn criterion_4() -> Outcome {
    // Constant video from the generator.
    let cfg = SynthConfig {
        num_frames: 50,
        ..SynthConfig::default().clean_stationary()
    };
    let frames = generate(&cfg).map_err(|e| e.to_string())?;
    let mut segs: Vec<Vec<Segment>> = frames
        .iter()
        .enumerate()
        .map(|(t, f)| connected_components(&f.predicted, t).segments)
        .collect();
    let assign = track_sequence(&mut segs, cfg.height, cfg.width, &TrackingParams::default()).map_err(|e| e.to_string())?;
    let ids0: Vec<u64> = assign[0].iter().map(|a| a.track_id).collect();
    for (t, a) in assign.iter().enumerate() {
        let ids: Vec<u64> = a.iter().map(|x| x.track_id).collect();
        ensure(ids == ids0, || format!("constant video: ids changed at frame {t}"))?;
    }

    // Step 2: centers (50,50) at t-2 and (60,60) at t-1, shifted k overlaps j.
    let (h, w) = (120, 120);
    let mut st = TrackState::new(h, w);
    let k0 = object_assignment(&mut st, 0, &rect_frame(h, w, &[(1, 45, 45, 11, 11)], 0))?.unwrap();
    object_assignment(&mut st, 1, &rect_frame(h, w, &[(1, 55, 55, 11, 11)], 1))?;
    let j = rect_frame(h, w, &[(1, 65, 70, 11, 11)], 2);
    let shifted: Vec<u32> = (65..76).flat_map(|r| (65..76).map(move |c| (r * w + c) as u32)).collect();
    let jo = overlap(&j.iter().find(|s| s.class_id == 1).unwrap().pixels, &shifted).map_err(|e| e.to_string())?;
    ensure(jo > 0.35, || format!("step-2 fixture overlap {jo} too small"))?;
    let a = object_assignment(&mut st, 2, &j)?.unwrap();
    ensure(a.step == MatchStep::Shift && a.track_id == k0.track_id, || format!("step-2 fixture: {a:?}, expected id {}", k0.track_id))?;

    // Step 4: seen at t-3 and t-2, absent at t-1, back near the extrapolation.
    let mut st = TrackState::new(h, w);
    let k0 = object_assignment(&mut st, 0, &rect_frame(h, w, &[(1, 15, 15, 11, 11)], 0))?.unwrap();
    object_assignment(&mut st, 1, &rect_frame(h, w, &[(1, 25, 25, 11, 11)], 1))?;
    ensure(object_assignment(&mut st, 2, &rect_frame(h, w, &[], 2))?.is_none(), || "object should be absent".into())?;
    let a = object_assignment(&mut st, 3, &rect_frame(h, w, &[(1, 47, 47, 11, 11)], 3))?.unwrap();
    ensure(a.step == MatchStep::Regression && a.track_id == k0.track_id, || format!("step-4 fixture: {a:?}, expected id {}", k0.track_id))?;

    // Per-frame uniqueness and determinism on generated streams.
    let mut checked = 0;
    for seed in [1u64, 2, 3] {
        let cfg = SynthConfig {
            num_frames: 40,
            seed,
            ..SynthConfig::default()
        };
        let frames = generate(&cfg).map_err(|e| e.to_string())?;
        let segs: Vec<Vec<Segment>> = frames
            .iter()
            .enumerate()
            .map(|(t, f)| connected_components(&f.predicted, t).segments)
            .collect();
        let run = |mut s: Vec<Vec<Segment>>| track_sequence(&mut s, cfg.height, cfg.width, &TrackingParams::default());
        let a = run(segs.clone()).map_err(|e| e.to_string())?;
        let b = run(segs.clone()).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("seed {seed}: tracking is not deterministic"))?;
        for (t, frame) in a.iter().enumerate() {
            // Distinct near-groups never share an id.
            let mut group_of: HashMap<u64, usize> = HashMap::new();
            for x in frame {
                let g = *group_of.entry(x.track_id).or_insert(x.group);
                ensure(g == x.group, || format!("seed {seed} frame {t}: id {} used by two groups", x.track_id))?;
            }
            checked += 1;
        }
    }
    Ok(format!("50-frame constant video, step-2/step-4 fixtures, {checked} frames checked for uniqueness"))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize, slots: usize, width: usize, task: Task, masked: bool) -> Samples {
    let x = (0..n * slots * width).map(|_| rng.random_range(-1.5..1.5)).collect();
    let mask = (0..n * slots)
        .map(|k| if masked && k % slots == 1 && (k / slots).is_multiple_of(2) { 0.0 } else { 1.0 })
        .collect();
    let y = (0..n)
        .map(|_| match task {
            Task::Classification => rng.random_range(0..2) as f64,
            Task::Regression => rng.random::<f64>(),
        })
        .collect();
    Samples::new(slots, width, x, mask, y).unwrap()
}

fn criterion_5() -> Outcome {
    const H: f64 = 1e-5;
    let rows: Vec<usize> = (0..5).collect();
    let mut worst: f64 = 0.0;
    let mut count = 0usize;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let task = if seed % 2 == 0 { Task::Classification } else { Task::Regression };

        let s = random_samples(&mut rng, 5, 2, 3, task, false);
        let mut net = Mlp::new(s.flat_width(), 7, task, seed, false);
        let (_, grad) = net.loss_and_gradient(&s, &rows);
        for k in 0..net.num_params() {
            let orig = net.params[k];
            net.params[k] = orig + H;
            let up = net.loss(&s, &rows);
            net.params[k] = orig - H;
            let down = net.loss(&s, &rows);
            net.params[k] = orig;
            let e = rel_err(grad[k], (up - down) / (2.0 * H));
            worst = worst.max(e);
            count += 1;
            ensure(e <= 1e-4, || format!("NN seed {seed} param {k}: analytic {} vs numeric {}", grad[k], (up - down) / (2.0 * H)))?;
        }

        let s = random_samples(&mut rng, 5, 3, 4, task, seed >= 5);
        let mut net = LstmNet::new(4, 6, task, seed, false);
        let (_, grad) = net.loss_and_gradient(&s, &rows);
        for k in 0..net.num_params() {
            let orig = net.params[k];
            net.params[k] = orig + H;
            let up = net.loss(&s, &rows);
            net.params[k] = orig - H;
            let down = net.loss(&s, &rows);
            net.params[k] = orig;
            let e = rel_err(grad[k], (up - down) / (2.0 * H));
            worst = worst.max(e);
            count += 1;
            ensure(e <= 1e-4, || format!("LSTM seed {seed} param {k}: analytic {} vs numeric {}", grad[k], (up - down) / (2.0 * H)))?;
        }
    }
    Ok(format!("{count} parameters, max relative error {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut sets = 0;
    while sets < 1000 {
        let n = rng.random_range(2..200);
        let levels = rng.random_range(1..20);
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        // Few distinct levels force plenty of ties.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let a = auroc(&labels, &scores).map_err(|e| e.to_string())?;
        let b = auroc_sweep(&labels, &scores).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).abs());
        ensure((a - b).abs() <= 1e-9, || format!("set {sets}: rank {a} vs sweep {b}"))?;
        sets += 1;
    }
    Ok(format!("{sets} sets, max difference {worst:.2e}"))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig::default();
    let manifest_path = write_stream(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let manifest = read_manifest(&manifest_path).map_err(|e| e.to_string())?;
    let m = 9;
    let mut frames = extract_stream(&manifest, &ExtractConfig { m, smoothing_kernel: 1 }).map_err(|e| e.to_string())?;
    track_extractions(&mut frames, manifest.height, manifest.width, &TrackingParams::default()).map_err(|e| e.to_string())?;
    let table = feature_table(&frames, manifest.num_classes, m).map_err(|e| e.to_string())?;
    let interior = table.rows.iter().filter(|r| r.has_interior()).count();
    ensure(interior >= 2000, || format!("only {interior} segments with interior"))?;

    let exp = ExperimentConfig {
        families: vec![Family::Linear, Family::GradientBoosting],
        tasks: vec![Task::Classification, Task::Regression],
        ms: vec![0, 9],
        histories: vec![0],
        split: SplitSpec::default(),
        template: ModelSpec::new(Family::GradientBoosting, Task::Classification, 0),
        baselines: true,
    };
    let report = run_experiment(&table, &exp).map_err(|e| e.to_string())?;
    let get = |kind, family, task, m, metric| {
        report
            .find(kind, family, task, m, 0)
            .and_then(|r| r.metric(metric))
            .map(|s| s.mean)
            .ok_or_else(|| format!("missing report row {kind:?} {family:?} {task:?} m={m}"))
    };
    let gb_auc = get(RowKind::Model, Some(Family::GradientBoosting), Task::Classification, 9, Metric::Auroc)?;
    let ent_auc = get(RowKind::EntropyBaseline, Some(Family::GradientBoosting), Task::Classification, 0, Metric::Auroc)?;
    let gb_r2 = get(RowKind::Model, Some(Family::GradientBoosting), Task::Regression, 9, Metric::R2)?;
    let lr0 = get(RowKind::Model, Some(Family::Linear), Task::Classification, 0, Metric::Auroc)?;
    let lr9 = get(RowKind::Model, Some(Family::Linear), Task::Classification, 9, Metric::Auroc)?;
    let secs = start.elapsed().as_secs_f64();
    let summary = format!(
        "{interior} segments, {} with IoU_adj=0; GB AUROC {gb_auc:.4} vs entropy {ent_auc:.4}; GB R2 {gb_r2:.4}; LR AUROC m=0 {lr0:.4} m=9 {lr9:.4}; {secs:.0}s",
        report.num_iou_zero
    );
    ensure(gb_auc >= 0.80, || format!("(a) GB AUROC below 0.80: {summary}"))?;
    ensure(gb_auc - ent_auc >= 0.02, || format!("(a) GB does not beat entropy by 2 pp: {summary}"))?;
    ensure(gb_r2 >= 0.50, || format!("(b) GB R2 below 0.50: {summary}"))?;
    ensure(lr0 - lr9 <= 0.005, || format!("(c) stability metrics degrade LR AUROC: {summary}"))?;
    Ok(summary)
}

fn criterion_8() -> Outcome {
    ensure(feature_count(5, 0) == 27 && feature_count(17, 0) == 39, || "baseline set size".into())?;
    for c in 2..=20 {
        for m in 0..=12 {
            let n = feature_count(c, m);
            ensure(n == 22 + c + 5 * m && feature_names(c, m).len() == n, || format!("count mismatch at c={c} m={m}"))?;
        }
    }
    // The m = 0, T = 0 pipeline on real streams.
    for c in [5usize, 17] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = SynthConfig {
            num_classes: c,
            num_frames: 3,
            num_objects: 6,
            ..SynthConfig::default()
        };
        let manifest = read_manifest(write_stream(&cfg, dir.path()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let mut frames = extract_stream(&manifest, &ExtractConfig::default()).map_err(|e| e.to_string())?;
        track_extractions(&mut frames, manifest.height, manifest.width, &TrackingParams::default()).map_err(|e| e.to_string())?;
        let table = feature_table(&frames, c, 0).map_err(|e| e.to_string())?;
        let ds = segmeta::dataset::build_time_series(&table, 0).map_err(|e| e.to_string())?;
        let want = 22 + c;
        ensure(table.width() == want && ds.slot_width() == want, || format!("c={c}: width {} != {want}", table.width()))?;
        ensure(table.rows.iter().all(|r| r.features.len() == want), || format!("c={c}: ragged rows"))?;
        ensure(ds.records.iter().all(|r| r.features.len() == want), || format!("c={c}: ragged records"))?;
    }
    Ok("27 features at c=5, 39 at c=17, 22+c+5m for c in 2..=20, m in 0..=12".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("naive baseline arithmetic", criterion_1),
        ("formula oracles", criterion_2),
        ("normalization and range suite", criterion_3),
        ("tracking invariants", criterion_4),
        ("NN/LSTM gradient checks", criterion_5),
        ("AUROC rank vs sweep", criterion_6),
        ("end-to-end signal recovery", criterion_7),
        ("feature count guard", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] criterion {} {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] criterion {} {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
