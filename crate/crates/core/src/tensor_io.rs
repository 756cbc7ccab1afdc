//! Stream storage: binary frame tensors, the JSON stream manifest, and the
//! ground-truth box-filter smoothing used to coarsen fine annotations.
//!
//! # Tensor files
//!
//! Every tensor file starts with a 20-byte little-endian header followed by
//! row-major `f32` values:
//!
//! | offset | size | field                               |
//! |--------|------|-------------------------------------|
//! | 0      | 4    | magic `b"TMSG"`                     |
//! | 4      | 2    | version (`u16`, currently 1)        |
//! | 6      | 2    | ndim (`u16`, 2 or 3)                |
//! | 8      | 4    | dim 0 (`u32`, height)               |
//! | 12     | 4    | dim 1 (`u32`, width)                |
//! | 16     | 4    | dim 2 (`u32`, depth, 1 when unused) |
//!
//! Label frames use the same layout with integral values.
//!
//! # Manifest
//!
//! ```json
//! {
//!   "height": 64, "width": 128, "num_classes": 5, "num_blocks": 10, "num_frames": 2,
//!   "class_names": ["background", "a", "b", "c", "d"],
//!   "frames": [
//!     { "softmax": "frame_0000_softmax.tmsg",
//!       "cell_states": "frame_0000_cells.tmsg",
//!       "ground_truth": "frame_0000_gt.tmsg" }
//!   ]
//! }
//! ```
//!
//! `cell_states` holds the pre-reduced `(height, width, num_blocks)` mean
//! cell states. Alternatively `cell_state_blocks` lists one raw
//! `(height, width, F)` tensor per block; it is reduced over `F` on load.
//! `ground_truth` is optional. Paths are relative to the manifest directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmaps::{mean_cell_state, CellStateStack, LabelFrame, SoftmaxFrame};

pub const MAGIC: &[u8; 4] = b"TMSG";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

/// A dense tensor of up to three dimensions as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    ndim: u16,
    shape: [usize; 3],
    values: Vec<f32>,
}

impl FrameTensor {
    pub fn new(dims: &[usize], values: Vec<f32>) -> Result<Self> {
        let (ndim, shape) = normalize_dims(dims)?;
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "tensor of shape {dims:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at flat index {index}")));
        }
        Ok(Self {
            ndim,
            shape,
            values,
        })
    }

    pub fn ndim(&self) -> usize {
        self.ndim as usize
    }

    /// `(height, width, depth)`; depth is 1 for 2-d tensors.
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn dims(&self) -> Vec<usize> {
        self.shape[..self.ndim as usize].to_vec()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

fn normalize_dims(dims: &[usize]) -> Result<(u16, [usize; 3])> {
    match dims {
        [h, w] => Ok((2, [*h, *w, 1])),
        [h, w, d] => Ok((3, [*h, *w, *d])),
        _ => Err(Error::invalid(format!(
            "tensor must have 2 or 3 dimensions, got {}",
            dims.len()
        ))),
    }
}

fn encode_header(ndim: u16, shape: [usize; 3]) -> Result<[u8; HEADER_LEN]> {
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&ndim.to_le_bytes());
    for (i, d) in shape.iter().enumerate() {
        let d = u32::try_from(*d).map_err(|_| Error::invalid(format!("dimension {d} exceeds u32")))?;
        header[8 + 4 * i..12 + 4 * i].copy_from_slice(&d.to_le_bytes());
    }
    Ok(header)
}

struct Header {
    ndim: u16,
    shape: [usize; 3],
}

fn decode_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let bad = |message: String| Error::Tensor {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file has {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic, expected TMSG".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let ndim = u16::from_le_bytes([bytes[6], bytes[7]]);
    if !(2..=3).contains(&ndim) {
        return Err(bad(format!("ndim {ndim} not in 2..=3")));
    }
    let mut shape = [0usize; 3];
    for (i, s) in shape.iter_mut().enumerate() {
        let o = 8 + 4 * i;
        *s = u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    }
    if ndim == 2 && shape[2] != 1 {
        return Err(bad("2-d tensor with depth != 1".into()));
    }
    Ok(Header { ndim, shape })
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &FrameTensor) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * tensor.values.len());
    buf.extend_from_slice(&encode_header(tensor.ndim, tensor.shape)?);
    for v in &tensor.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a tensor, requiring exactly `expected_shape` (2 or 3 dims).
pub fn read_tensor(path: impl AsRef<Path>, expected_shape: &[usize]) -> Result<FrameTensor> {
    let path = path.as_ref();
    let (ndim, shape) = normalize_dims(expected_shape)?;
    let tensor = read_tensor_any(path)?;
    if tensor.ndim != ndim || tensor.shape != shape {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            expected: shape,
            found: format!("{:?}", tensor.dims()),
        });
    }
    Ok(tensor)
}

/// Reads a tensor with whatever shape its header declares.
pub fn read_tensor_any(path: impl AsRef<Path>) -> Result<FrameTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = decode_header(path, &bytes)?;
    let count: usize = header.shape.iter().product();
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * count {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            expected: header.shape,
            found: format!("{} payload bytes (need {})", payload.len(), 4 * count),
        });
    }
    let mut values = Vec::with_capacity(count);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                path: path.to_path_buf(),
                index,
            });
        }
        values.push(v);
    }
    Ok(FrameTensor {
        ndim: header.ndim,
        shape: header.shape,
        values,
    })
}

/// Checks the header and byte length of a tensor file without decoding the
/// payload. Returns the declared `(ndim, shape)`.
fn probe_tensor(path: &Path) -> Result<(u16, [usize; 3])> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; HEADER_LEN];
    use std::io::Read;
    let read = file.read(&mut head).map_err(|e| Error::io(path, e))?;
    let header = decode_header(path, &head[..read])?;
    let count: usize = header.shape.iter().product();
    let expected_len = (HEADER_LEN + 4 * count) as u64;
    if meta.len() != expected_len {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            expected: header.shape,
            found: format!("{} bytes on disk (need {expected_len})", meta.len()),
        });
    }
    Ok((header.ndim, header.shape))
}

/// Where a frame's cell states come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellStateSource {
    /// One `(height, width, num_blocks)` tensor of mean cell states.
    Reduced(PathBuf),
    /// One raw `(height, width, F)` tensor per block.
    RawBlocks(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePaths {
    pub softmax: PathBuf,
    pub cell_states: CellStateSource,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamManifest {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub num_blocks: usize,
    pub num_frames: usize,
    pub class_names: Option<Vec<String>>,
    /// Absolute (manifest-dir joined) paths per frame.
    pub frames: Vec<FramePaths>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDocument {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub num_blocks: usize,
    pub num_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub softmax: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_states: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_state_blocks: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<StreamManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fail = |message: String| Error::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let doc: ManifestDocument =
        serde_json::from_str(&text).map_err(|e| fail(format!("schema violation: {e}")))?;

    if doc.height < 3 {
        return Err(fail(format!("height < 3 (got {})", doc.height)));
    }
    if doc.width < 3 {
        return Err(fail(format!("width < 3 (got {})", doc.width)));
    }
    if doc.num_classes < 2 {
        return Err(fail(format!("num_classes < 2 (got {})", doc.num_classes)));
    }
    if doc.num_blocks < 2 {
        return Err(fail(format!("num_blocks < 2 (got {})", doc.num_blocks)));
    }
    if doc.num_frames < 1 {
        return Err(fail("num_frames < 1".into()));
    }
    if doc.frames.len() != doc.num_frames {
        return Err(fail(format!(
            "num_frames is {} but frames lists {} entries",
            doc.num_frames,
            doc.frames.len()
        )));
    }
    if let Some(names) = &doc.class_names {
        if names.len() != doc.num_classes {
            return Err(fail(format!(
                "class_names has {} entries, num_classes is {}",
                names.len(),
                doc.num_classes
            )));
        }
    }

    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let (h, w, c, l) = (doc.height, doc.width, doc.num_classes, doc.num_blocks);
    let mut frames = Vec::with_capacity(doc.frames.len());
    for (t, entry) in doc.frames.iter().enumerate() {
        let softmax = root.join(&entry.softmax);
        expect_shape(&softmax, 3, [h, w, c])?;

        let cell_states = match (&entry.cell_states, &entry.cell_state_blocks) {
            (Some(p), None) => {
                let p = root.join(p);
                expect_shape(&p, 3, [h, w, l])?;
                CellStateSource::Reduced(p)
            }
            (None, Some(blocks)) => {
                if blocks.len() != l {
                    return Err(fail(format!(
                        "frame {t}: cell_state_blocks has {} entries, num_blocks is {l}",
                        blocks.len()
                    )));
                }
                let mut paths = Vec::with_capacity(l);
                for b in blocks {
                    let p = root.join(b);
                    let (_, shape) = probe_tensor(&p)?;
                    if shape[0] != h || shape[1] != w || shape[2] < 1 {
                        return Err(Error::ShapeMismatch {
                            path: p,
                            expected: [h, w, shape[2].max(1)],
                            found: format!("{shape:?}"),
                        });
                    }
                    paths.push(p);
                }
                CellStateSource::RawBlocks(paths)
            }
            (Some(_), Some(_)) => {
                return Err(fail(format!(
                    "frame {t}: give either cell_states or cell_state_blocks, not both"
                )))
            }
            (None, None) => return Err(fail(format!("frame {t}: missing cell_states"))),
        };

        let ground_truth = match &entry.ground_truth {
            Some(p) => {
                let p = root.join(p);
                expect_shape(&p, 2, [h, w, 1])?;
                Some(p)
            }
            None => None,
        };
        frames.push(FramePaths {
            softmax,
            cell_states,
            ground_truth,
        });
    }

    Ok(StreamManifest {
        height: h,
        width: w,
        num_classes: c,
        num_blocks: l,
        num_frames: doc.num_frames,
        class_names: doc.class_names,
        frames,
    })
}

fn expect_shape(path: &Path, ndim: u16, shape: [usize; 3]) -> Result<()> {
    let (found_ndim, found) = probe_tensor(path)?;
    if found_ndim != ndim || found != shape {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            expected: shape,
            found: format!("{:?}", &found[..found_ndim as usize]),
        });
    }
    Ok(())
}

pub fn write_manifest(path: impl AsRef<Path>, doc: &ManifestDocument) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl StreamManifest {
    pub fn load_softmax(&self, frame: usize) -> Result<SoftmaxFrame> {
        let paths = self.frame(frame)?;
        let t = read_tensor(&paths.softmax, &[self.height, self.width, self.num_classes])?;
        let probs = t.values().iter().map(|&v| v as f64).collect();
        SoftmaxFrame::new(self.height, self.width, self.num_classes, probs)
            .map_err(|e| with_path(e, &paths.softmax))
    }

    pub fn load_cell_states(&self, frame: usize) -> Result<CellStateStack> {
        let paths = self.frame(frame)?;
        match &paths.cell_states {
            CellStateSource::Reduced(p) => {
                let t = read_tensor(p, &[self.height, self.width, self.num_blocks])?;
                let values = t.values().iter().map(|&v| v as f64).collect();
                CellStateStack::new(self.height, self.width, self.num_blocks, values)
            }
            CellStateSource::RawBlocks(blocks) => {
                let mut maps = Vec::with_capacity(blocks.len());
                for p in blocks {
                    let t = read_tensor_any(p)?;
                    let [h, w, f] = t.shape();
                    let raw: Vec<f64> = t.values().iter().map(|&v| v as f64).collect();
                    maps.push(mean_cell_state(h, w, f, &raw)?);
                }
                CellStateStack::from_block_maps(&maps)
            }
        }
    }

    pub fn load_ground_truth(&self, frame: usize) -> Result<Option<LabelFrame>> {
        let paths = self.frame(frame)?;
        let Some(p) = &paths.ground_truth else {
            return Ok(None);
        };
        let t = read_tensor(p, &[self.height, self.width])?;
        let labels = tensor_to_labels(&t, self.num_classes).map_err(|e| with_path(e, p))?;
        Ok(Some(labels))
    }

    fn frame(&self, frame: usize) -> Result<&FramePaths> {
        self.frames
            .get(frame)
            .ok_or_else(|| Error::invalid(format!("frame {frame} out of range 0..{}", self.num_frames)))
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Invalid(message) => Error::Tensor {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    }
}

pub fn labels_to_tensor(labels: &LabelFrame) -> FrameTensor {
    let values = labels.labels().iter().map(|&l| l as f32).collect();
    FrameTensor::new(&[labels.height(), labels.width()], values).expect("label frame shape is consistent")
}

pub fn tensor_to_labels(tensor: &FrameTensor, num_classes: usize) -> Result<LabelFrame> {
    if tensor.ndim() != 2 {
        return Err(Error::invalid("label tensor must be 2-d"));
    }
    let [h, w, _] = tensor.shape();
    let mut labels = Vec::with_capacity(h * w);
    for (i, &v) in tensor.values().iter().enumerate() {
        if v.fract() != 0.0 || v < 0.0 {
            return Err(Error::invalid(format!("label at flat index {i} is not a class index: {v}")));
        }
        labels.push(v as u16);
    }
    LabelFrame::new(h, w, num_classes, labels)
}

/// Coarsens a label frame: every class mask is filtered with a normalized
/// `kernel × kernel` box filter (zero padding outside the image) and each
/// pixel takes the class with the largest response, lowest index on ties.
pub fn smooth_labels(labels: &LabelFrame, kernel: usize) -> Result<LabelFrame> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::invalid(format!("box kernel must be odd and positive, got {kernel}")));
    }
    if kernel == 1 {
        return Ok(labels.clone());
    }
    let (h, w, c) = (labels.height(), labels.width(), labels.num_classes());
    let r = kernel / 2;
    // The normalizer is shared by all classes, so comparing window counts is
    // the same as comparing filtered masks and stays exact.
    let mut best_count = vec![0u32; h * w];
    let mut best_class = vec![0u16; h * w];
    let mut integral = vec![0u32; (h + 1) * (w + 1)];
    for class in 0..c as u16 {
        for row in 0..h {
            let mut run = 0u32;
            for col in 0..w {
                run += (labels.get(row, col) == class) as u32;
                integral[(row + 1) * (w + 1) + col + 1] = integral[row * (w + 1) + col + 1] + run;
            }
        }
        for row in 0..h {
            let r0 = row.saturating_sub(r);
            let r1 = (row + r + 1).min(h);
            for col in 0..w {
                let c0 = col.saturating_sub(r);
                let c1 = (col + r + 1).min(w);
                let count = integral[r1 * (w + 1) + c1] + integral[r0 * (w + 1) + c0]
                    - integral[r0 * (w + 1) + c1]
                    - integral[r1 * (w + 1) + c0];
                let z = row * w + col;
                if count > best_count[z] {
                    best_count[z] = count;
                    best_class[z] = class;
                }
            }
        }
    }
    LabelFrame::new(h, w, c, best_class)
}
