//! Segments: maximal 8-connected components of equal predicted class, with
//! the inner/boundary pixel split and geometric center.

use std::collections::VecDeque;
use std::io::Write;

use crate::heatmaps::LabelFrame;

/// Offsets of the 8-neighbourhood.
pub(crate) const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub frame: usize,
    /// Index within the frame, raster order of each component's first pixel.
    pub component: usize,
    pub class_id: u16,
    /// Image width, to map flat indices back to `(row, col)`.
    pub width: usize,
    /// Sorted flat pixel indices `row * width + col`.
    pub pixels: Vec<u32>,
    pub inner: Vec<u32>,
    pub boundary: Vec<u32>,
    /// `(row, col)` mean.
    pub center: (f64, f64),
    pub track_id: Option<u64>,
}

impl Segment {
    pub fn size(&self) -> usize {
        self.pixels.len()
    }

    pub fn size_inner(&self) -> usize {
        self.inner.len()
    }

    pub fn size_boundary(&self) -> usize {
        self.boundary.len()
    }

    pub fn has_interior(&self) -> bool {
        !self.inner.is_empty()
    }

    pub fn coords(&self, z: u32) -> (usize, usize) {
        (z as usize / self.width, z as usize % self.width)
    }
}

/// All segments of one frame plus the pixel → component map.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub height: usize,
    pub width: usize,
    pub component_of: Vec<u32>,
    pub segments: Vec<Segment>,
}

/// Partitions the frame into maximal 8-connected same-class components.
pub fn connected_components(labels: &LabelFrame, frame: usize) -> Segmentation {
    let (h, w) = (labels.height(), labels.width());
    let lab = labels.labels();
    const UNSEEN: u32 = u32::MAX;
    let mut component_of = vec![UNSEEN; h * w];
    let mut segments = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..h * w {
        if component_of[start] != UNSEEN {
            continue;
        }
        let id = segments.len() as u32;
        let class = lab[start];
        let mut pixels = Vec::new();
        component_of[start] = id;
        queue.push_back(start);
        while let Some(z) = queue.pop_front() {
            pixels.push(z as u32);
            let (r, c) = ((z / w) as isize, (z % w) as isize);
            for (dr, dc) in NEIGHBOURS {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let n = nr as usize * w + nc as usize;
                if component_of[n] == UNSEEN && lab[n] == class {
                    component_of[n] = id;
                    queue.push_back(n);
                }
            }
        }
        pixels.sort_unstable();
        let (inner, boundary) = split_inner_boundary(&pixels, labels);
        let center = geometric_center(&pixels, w);
        segments.push(Segment {
            frame,
            component: id as usize,
            class_id: class,
            width: w,
            pixels,
            inner,
            boundary,
            center,
            track_id: None,
        });
    }

    Segmentation {
        height: h,
        width: w,
        component_of,
        segments,
    }
}

/// A pixel is inner iff all eight neighbours exist and carry the segment's
/// class. Under 8-connectivity a same-class neighbour is always in the same
/// component, so the label test is equivalent to a membership test.
pub fn split_inner_boundary(pixels: &[u32], labels: &LabelFrame) -> (Vec<u32>, Vec<u32>) {
    let (h, w) = (labels.height(), labels.width());
    let lab = labels.labels();
    let mut inner = Vec::new();
    let mut boundary = Vec::new();
    for &z in pixels {
        let z = z as usize;
        let (r, c) = (z / w, z % w);
        let class = lab[z];
        let is_inner = r > 0
            && c > 0
            && r + 1 < h
            && c + 1 < w
            && NEIGHBOURS.iter().all(|(dr, dc)| {
                let n = (r as isize + dr) as usize * w + (c as isize + dc) as usize;
                lab[n] == class
            });
        if is_inner {
            inner.push(z as u32);
        } else {
            boundary.push(z as u32);
        }
    }
    (inner, boundary)
}

/// Mean `(row, col)` of the pixels.
pub fn geometric_center(pixels: &[u32], width: usize) -> (f64, f64) {
    let n = pixels.len() as f64;
    let (mut sr, mut sc) = (0.0, 0.0);
    for &z in pixels {
        sr += (z as usize / width) as f64;
        sc += (z as usize % width) as f64;
    }
    (sr / n, sc / n)
}

pub const SEGMENT_CSV_HEADER: &str =
    "frame,component,class,S,S_in,S_bd,center_row,center_col,track_id";

pub fn write_segments_csv<W: Write>(mut out: W, segments: &[Segment]) -> std::io::Result<()> {
    writeln!(out, "{SEGMENT_CSV_HEADER}")?;
    for s in segments {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.frame,
            s.component,
            s.class_id,
            s.size(),
            s.size_inner(),
            s.size_boundary(),
            s.center.0,
            s.center.1,
            s.track_id.map(|t| t.to_string()).unwrap_or_default()
        )?;
    }
    Ok(())
}
