//! Overlap/center based segment tracking.
//!
//! Frames are processed strictly in order. Within a frame, segments are
//! handled largest first (raster order of the component on ties) and every
//! step runs over all still unmatched segments before the next step starts:
//!
//! 1. same-class segments of the current frame closer than `c_near` are
//!    grouped and tracked as one unit (they share a track id);
//! 2. a track seen at `t-1` and `t-2` is shifted by its last center
//!    displacement and matched if the overlap exceeds `c_over` or the
//!    centers are closer than `c_dist`; a track seen only at `t-1` is
//!    matched on center distance `< c_dist`;
//! 3. tracks at `t-1` are matched on overlap `>= c_over`;
//! 4. tracks seen at least twice in the last `lr` frames are matched if the
//!    least-squares extrapolated center is closer than `c_lin`;
//! 5. everything left gets a fresh id.
//!
//! When several tracks qualify, the one with the largest overlap wins, then
//! the smallest center distance, then the lowest id.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::Segment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingParams {
    pub c_near: f64,
    pub c_over: f64,
    pub c_dist: f64,
    pub c_lin: f64,
    /// Regression window in frames.
    pub lr: usize,
}

impl Default for TrackingParams {
    fn default() -> Self {
        Self {
            c_near: 10.0,
            c_over: 0.35,
            c_dist: 100.0,
            c_lin: 50.0,
            lr: 5,
        }
    }
}

impl TrackingParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.c_near, self.c_dist, self.c_lin]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive {
            return Err(Error::Config("c_near, c_dist and c_lin must be positive".into()));
        }
        if !(self.c_over > 0.0 && self.c_over <= 1.0) {
            return Err(Error::Config(format!("c_over must lie in (0, 1], got {}", self.c_over)));
        }
        if self.lr < 2 {
            return Err(Error::Config(format!("lr must be >= 2, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchStep {
    Near = 1,
    Shift = 2,
    Overlap = 3,
    Regression = 4,
    New = 5,
}

impl MatchStep {
    pub fn number(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackAssignment {
    pub track_id: u64,
    pub step: MatchStep,
    /// Component index of the largest segment of this segment's step-1 group.
    pub group: usize,
}

#[derive(Debug, Clone)]
struct Observation {
    frame: usize,
    class_id: u16,
    pixels: Vec<u32>,
    center: (f64, f64),
}

/// Tracker state carried from frame to frame.
#[derive(Debug, Clone)]
pub struct TrackState {
    height: usize,
    width: usize,
    next_id: u64,
    tracks: BTreeMap<u64, VecDeque<Observation>>,
}

/// `O_{j,k} = |k ∩ j| / |j|` for sorted pixel sets.
pub fn overlap(j: &[u32], k: &[u32]) -> Result<f64> {
    if j.is_empty() {
        return Err(Error::invalid("overlap with an empty segment"));
    }
    Ok(intersection_size(j, k) as f64 / j.len() as f64)
}

fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Ordinary least squares per coordinate over `(frame, center)` pairs,
/// evaluated at `horizon`.
pub fn predict_center_linreg(history: &[(usize, (f64, f64))], horizon: usize) -> Result<(f64, f64)> {
    if history.len() < 2 {
        return Err(Error::invalid(format!(
            "center regression needs >= 2 observations, got {}",
            history.len()
        )));
    }
    let n = history.len() as f64;
    let mx = history.iter().map(|(t, _)| *t as f64).sum::<f64>() / n;
    let sxx: f64 = history.iter().map(|(t, _)| (*t as f64 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("center regression needs distinct frame indices"));
    }
    let fit = |coord: fn(&(f64, f64)) -> f64| {
        let my = history.iter().map(|(_, c)| coord(c)).sum::<f64>() / n;
        let sxy: f64 = history
            .iter()
            .map(|(t, c)| (*t as f64 - mx) * (coord(c) - my))
            .sum();
        let slope = sxy / sxx;
        my + slope * (horizon as f64 - mx)
    };
    Ok((fit(|c| c.0), fit(|c| c.1)))
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy)]
struct BBox {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
}

fn bbox(pixels: &[u32], width: usize) -> BBox {
    let mut b = BBox {
        r0: usize::MAX,
        r1: 0,
        c0: usize::MAX,
        c1: 0,
    };
    for &z in pixels {
        let (r, c) = (z as usize / width, z as usize % width);
        b.r0 = b.r0.min(r);
        b.r1 = b.r1.max(r);
        b.c0 = b.c0.min(c);
        b.c1 = b.c1.max(c);
    }
    b
}

fn bbox_gap(a: &BBox, b: &BBox) -> f64 {
    let dr = a.r0.saturating_sub(b.r1).max(b.r0.saturating_sub(a.r1)) as f64;
    let dc = a.c0.saturating_sub(b.c1).max(b.c0.saturating_sub(a.c1)) as f64;
    (dr * dr + dc * dc).sqrt()
}

/// Minimum Euclidean distance between two boundary pixel sets, or `None`
/// when it is certainly not below `limit`.
fn boundary_distance_below(a: &Segment, b: &Segment, limit: f64) -> Option<f64> {
    let w = a.width;
    if bbox_gap(&bbox(&a.boundary, w), &bbox(&b.boundary, w)) >= limit {
        return None;
    }
    let mut best = f64::INFINITY;
    for &p in &a.boundary {
        let (pr, pc) = ((p as usize / w) as f64, (p as usize % w) as f64);
        for &q in &b.boundary {
            let (qr, qc) = ((q as usize / w) as f64, (q as usize % w) as f64);
            let d2 = (pr - qr).powi(2) + (pc - qc).powi(2);
            if d2 < best {
                best = d2;
            }
        }
    }
    let d = best.sqrt();
    (d < limit).then_some(d)
}

struct Unit {
    members: Vec<usize>,
    class_id: u16,
    pixels: Vec<u32>,
    center: (f64, f64),
}

#[derive(Clone, Copy)]
struct Candidate {
    id: u64,
    overlap: f64,
    distance: f64,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    if a.overlap != b.overlap {
        return a.overlap > b.overlap;
    }
    if a.distance != b.distance {
        return a.distance < b.distance;
    }
    a.id < b.id
}

impl TrackState {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            next_id: 1,
            tracks: BTreeMap::new(),
        }
    }

    /// The id the next fresh track will receive.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    fn observation_at(&self, id: u64, frame: usize) -> Option<&Observation> {
        self.tracks.get(&id)?.iter().rev().find(|o| o.frame == frame)
    }

    fn shift_pixels(&self, pixels: &[u32], dr: i64, dc: i64) -> Vec<u32> {
        let (h, w) = (self.height as i64, self.width as i64);
        let mut out: Vec<u32> = pixels
            .iter()
            .filter_map(|&z| {
                let r = z as i64 / w + dr;
                let c = z as i64 % w + dc;
                (r >= 0 && r < h && c >= 0 && c < w).then(|| (r * w + c) as u32)
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Assigns track ids to the segments of frame `frame` (one assignment
    /// per input segment, same order) and updates the state.
    pub fn track_frame(
        &mut self,
        frame: usize,
        segments: &[Segment],
        params: &TrackingParams,
    ) -> Result<Vec<TrackAssignment>> {
        params.validate()?;
        if segments.iter().any(|s| s.width != self.width || s.pixels.is_empty()) {
            return Err(Error::invalid("segment does not belong to this tracker's frame geometry"));
        }

        let mut order: Vec<usize> = (0..segments.len()).collect();
        order.sort_by(|&a, &b| {
            segments[b]
                .size()
                .cmp(&segments[a].size())
                .then(segments[a].component.cmp(&segments[b].component))
        });

        let units = self.group_near(segments, &order, params);
        let prev = frame.checked_sub(1);
        let prev2 = frame.checked_sub(2);

        let mut unit_match: Vec<Option<(u64, MatchStep)>> = vec![None; units.len()];
        let mut claimed: Vec<u64> = Vec::new();

        // Step 2.
        if let Some(prev) = prev {
            for (u, unit) in units.iter().enumerate() {
                let mut best: Option<Candidate> = None;
                for &id in self.tracks.keys() {
                    if claimed.contains(&id) {
                        continue;
                    }
                    let Some(last) = self.observation_at(id, prev) else { continue };
                    if last.class_id != unit.class_id {
                        continue;
                    }
                    let older = prev2.and_then(|p2| self.observation_at(id, p2));
                    let cand = match older {
                        Some(older) => {
                            let shift = (last.center.0 - older.center.0, last.center.1 - older.center.1);
                            let shifted = self.shift_pixels(
                                &last.pixels,
                                shift.0.round() as i64,
                                shift.1.round() as i64,
                            );
                            let ov = overlap(&unit.pixels, &shifted)?;
                            let predicted = (last.center.0 + shift.0, last.center.1 + shift.1);
                            let d = distance(unit.center, predicted);
                            (ov > params.c_over || d < params.c_dist).then_some(Candidate {
                                id,
                                overlap: ov,
                                distance: d,
                            })
                        }
                        None => {
                            let d = distance(unit.center, last.center);
                            (d < params.c_dist).then_some(Candidate {
                                id,
                                overlap: overlap(&unit.pixels, &last.pixels)?,
                                distance: d,
                            })
                        }
                    };
                    if let Some(c) = cand {
                        if best.is_none_or(|b| better(&c, &b)) {
                            best = Some(c);
                        }
                    }
                }
                if let Some(b) = best {
                    unit_match[u] = Some((b.id, MatchStep::Shift));
                    claimed.push(b.id);
                }
            }
        }

        // Step 3.
        if let Some(prev) = prev {
            for (u, unit) in units.iter().enumerate() {
                if unit_match[u].is_some() {
                    continue;
                }
                let mut best: Option<Candidate> = None;
                for &id in self.tracks.keys() {
                    if claimed.contains(&id) {
                        continue;
                    }
                    let Some(last) = self.observation_at(id, prev) else { continue };
                    if last.class_id != unit.class_id {
                        continue;
                    }
                    let ov = overlap(&unit.pixels, &last.pixels)?;
                    if ov >= params.c_over {
                        let c = Candidate {
                            id,
                            overlap: ov,
                            distance: distance(unit.center, last.center),
                        };
                        if best.is_none_or(|b| better(&c, &b)) {
                            best = Some(c);
                        }
                    }
                }
                if let Some(b) = best {
                    unit_match[u] = Some((b.id, MatchStep::Overlap));
                    claimed.push(b.id);
                }
            }
        }

        // Step 4.
        let window_start = frame.saturating_sub(params.lr);
        for (u, unit) in units.iter().enumerate() {
            if unit_match[u].is_some() {
                continue;
            }
            let mut best: Option<Candidate> = None;
            for (&id, obs) in &self.tracks {
                if claimed.contains(&id) {
                    continue;
                }
                let recent: Vec<&Observation> = obs
                    .iter()
                    .filter(|o| o.frame >= window_start && o.frame < frame)
                    .collect();
                if recent.len() < 2 || recent.last().unwrap().class_id != unit.class_id {
                    continue;
                }
                let history: Vec<(usize, (f64, f64))> = recent.iter().map(|o| (o.frame, o.center)).collect();
                let predicted = predict_center_linreg(&history, frame)?;
                let d = distance(unit.center, predicted);
                if d < params.c_lin {
                    let c = Candidate {
                        id,
                        overlap: overlap(&unit.pixels, &recent.last().unwrap().pixels)?,
                        distance: d,
                    };
                    if best.is_none_or(|b| better(&c, &b)) {
                        best = Some(c);
                    }
                }
            }
            if let Some(b) = best {
                unit_match[u] = Some((b.id, MatchStep::Regression));
                claimed.push(b.id);
            }
        }

        // Step 5.
        for m in unit_match.iter_mut().filter(|m| m.is_none()) {
            *m = Some((self.next_id, MatchStep::New));
            self.next_id += 1;
        }

        let mut out = vec![
            TrackAssignment {
                track_id: 0,
                step: MatchStep::New,
                group: 0,
            };
            segments.len()
        ];
        for (unit, m) in units.iter().zip(&unit_match) {
            let (id, step) = m.expect("every unit is matched by step 5");
            let leader = unit.members[0];
            for (i, &s) in unit.members.iter().enumerate() {
                out[s] = TrackAssignment {
                    track_id: id,
                    step: if i == 0 { step } else { MatchStep::Near },
                    group: segments[leader].component,
                };
            }
        }

        for (unit, m) in units.into_iter().zip(unit_match) {
            let (id, _) = m.unwrap();
            self.tracks.entry(id).or_default().push_back(Observation {
                frame,
                class_id: unit.class_id,
                pixels: unit.pixels,
                center: unit.center,
            });
        }
        let keep_from = (frame + 1).saturating_sub(params.lr.max(2));
        self.tracks.retain(|_, obs| {
            while obs.front().is_some_and(|o| o.frame < keep_from) {
                obs.pop_front();
            }
            !obs.is_empty()
        });

        Ok(out)
    }

    /// Step 1: union of same-class segments closer than `c_near`. Units come
    /// out ordered by total size, members by the global segment order.
    fn group_near(&self, segments: &[Segment], order: &[usize], params: &TrackingParams) -> Vec<Unit> {
        let n = segments.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for a in 0..n {
            for b in a + 1..n {
                if segments[a].class_id != segments[b].class_id {
                    continue;
                }
                if boundary_distance_below(&segments[a], &segments[b], params.c_near).is_some() {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &s in order {
            let root = find(&mut parent, s);
            groups.entry(root).or_default().push(s);
        }
        let mut units: Vec<Unit> = groups
            .into_values()
            .map(|members| {
                let mut pixels: Vec<u32> = members
                    .iter()
                    .flat_map(|&s| segments[s].pixels.iter().copied())
                    .collect();
                pixels.sort_unstable();
                let center = crate::segmentation::geometric_center(&pixels, self.width);
                Unit {
                    class_id: segments[members[0]].class_id,
                    members,
                    pixels,
                    center,
                }
            })
            .collect();
        let rank: Vec<usize> = {
            let mut r = vec![0; n];
            for (i, &s) in order.iter().enumerate() {
                r[s] = i;
            }
            r
        };
        units.sort_by(|a, b| {
            b.pixels
                .len()
                .cmp(&a.pixels.len())
                .then(rank[a.members[0]].cmp(&rank[b.members[0]]))
        });
        units
    }
}

/// Tracks a whole sequence, writing ids into the segments.
pub fn track_sequence(
    frames: &mut [Vec<Segment>],
    height: usize,
    width: usize,
    params: &TrackingParams,
) -> Result<Vec<Vec<TrackAssignment>>> {
    let mut state = TrackState::new(height, width);
    let mut all = Vec::with_capacity(frames.len());
    for (t, segments) in frames.iter_mut().enumerate() {
        let assignment = state.track_frame(t, segments, params)?;
        for (s, a) in segments.iter_mut().zip(&assignment) {
            s.track_id = Some(a.track_id);
        }
        all.push(assignment);
    }
    Ok(all)
}

pub const TRACKING_CSV_HEADER: &str = "frame,component,track_id,matched_step";

pub fn write_tracking_csv<W: Write>(
    mut out: W,
    frames: &[Vec<Segment>],
    assignments: &[Vec<TrackAssignment>],
) -> std::io::Result<()> {
    writeln!(out, "{TRACKING_CSV_HEADER}")?;
    for (segments, assignment) in frames.iter().zip(assignments) {
        for (s, a) in segments.iter().zip(assignment) {
            writeln!(out, "{},{},{},{}", s.frame, s.component, a.track_id, a.step.number())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::heatmaps::LabelFrame;
    use crate::segmentation::connected_components;

    #[test]
    fn overlap_examples() {
        let j = [0u32, 1, 10, 11];
        assert_eq!(overlap(&j, &j).unwrap(), 1.0);
        assert_eq!(overlap(&j, &[5, 6]).unwrap(), 0.0);
        // j = 2x2 block at (0,0) in a 10-wide frame, k = {(1,1),(1,2)}.
        assert_eq!(overlap(&j, &[11, 12]).unwrap(), 0.25);
        assert!(overlap(&[], &j).is_err());
    }

    #[test]
    fn linreg_examples() {
        let p = predict_center_linreg(&[(0, (10.0, 10.0)), (1, (20.0, 20.0))], 2).unwrap();
        assert_abs_diff_eq!(p.0, 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.1, 30.0, epsilon = 1e-12);
        let p = predict_center_linreg(&[(3, (4.0, -1.0)), (5, (4.0, -1.0)), (6, (4.0, -1.0))], 9).unwrap();
        assert_eq!(p, (4.0, -1.0));
        let p = predict_center_linreg(&[(0, (0.0, 0.0)), (1, (10.0, 0.0)), (2, (18.0, 0.0))], 3).unwrap();
        assert_abs_diff_eq!(p.0, 27.0 + 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.1, 0.0);
        assert!(predict_center_linreg(&[(0, (1.0, 1.0))], 1).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(TrackingParams::default().validate().is_ok());
        let bad = TrackingParams {
            c_over: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn frame_with_rects(h: usize, w: usize, rects: &[(u16, usize, usize, usize, usize)], t: usize) -> Vec<Segment> {
        let mut labels = vec![0u16; h * w];
        for &(class, r0, c0, rh, cw) in rects {
            for r in r0..r0 + rh {
                for c in c0..c0 + cw {
                    labels[r * w + c] = class;
                }
            }
        }
        let lf = LabelFrame::new(h, w, 4, labels).unwrap();
        connected_components(&lf, t).segments
    }

    #[test]
    fn identical_frames_keep_ids() {
        let (h, w) = (40, 60);
        let rects = [(1, 2, 2, 6, 6), (2, 20, 30, 8, 10), (3, 5, 45, 5, 5)];
        let mut state = TrackState::new(h, w);
        let params = TrackingParams::default();
        let first = state.track_frame(0, &frame_with_rects(h, w, &rects, 0), &params).unwrap();
        assert!(first.iter().all(|a| a.step == MatchStep::New));
        for t in 1..6 {
            let a = state.track_frame(t, &frame_with_rects(h, w, &rects, t), &params).unwrap();
            assert_eq!(
                a.iter().map(|x| x.track_id).collect::<Vec<_>>(),
                first.iter().map(|x| x.track_id).collect::<Vec<_>>()
            );
            // The shift step sees every unmoved track first.
            assert!(a.iter().all(|x| x.step == MatchStep::Shift));
        }
    }

    #[test]
    fn new_object_gets_next_id() {
        let (h, w) = (30, 30);
        let params = TrackingParams::default();
        let mut state = TrackState::new(h, w);
        state.track_frame(0, &frame_with_rects(h, w, &[(1, 2, 2, 5, 5)], 0), &params).unwrap();
        let expected = state.next_id();
        let segs = frame_with_rects(h, w, &[(1, 2, 2, 5, 5), (2, 20, 20, 5, 5)], 1);
        let a = state.track_frame(1, &segs, &params).unwrap();
        let fresh = segs.iter().position(|s| s.class_id == 2).unwrap();
        assert_eq!(a[fresh].track_id, expected);
        assert_eq!(a[fresh].step, MatchStep::New);
    }

    #[test]
    fn near_same_class_segments_share_an_id() {
        let (h, w) = (30, 40);
        let segs = frame_with_rects(h, w, &[(1, 5, 5, 5, 5), (1, 5, 13, 5, 5), (1, 22, 30, 4, 4)], 0);
        let fg: Vec<&Segment> = segs.iter().filter(|s| s.class_id == 1).collect();
        assert_eq!(fg.len(), 3);
        let a = TrackState::new(h, w)
            .track_frame(0, &segs, &TrackingParams::default())
            .unwrap();
        let id = |col: usize| {
            let i = segs
                .iter()
                .position(|s| s.class_id == 1 && s.coords(s.pixels[0]).1 == col)
                .unwrap();
            a[i]
        };
        assert_eq!(id(5).track_id, id(13).track_id);
        assert_eq!(id(13).step, MatchStep::Near);
        assert_ne!(id(5).track_id, id(30).track_id);
        assert_eq!(id(5).group, id(13).group);
    }
}
