use std::fs;
use std::path::Path;

use segmeta::tensor_io::{
    read_manifest, read_tensor, read_tensor_any, write_manifest, write_tensor, FrameEntry, FrameTensor, ManifestDocument,
};
use segmeta::synth::{write_stream, SynthConfig};
use segmeta::Error;

fn doc(c: usize) -> ManifestDocument {
    ManifestDocument {
        height: 4,
        width: 4,
        num_classes: c,
        num_blocks: 2,
        num_frames: 1,
        class_names: None,
        frames: vec![FrameEntry {
            softmax: "sm.tmsg".into(),
            cell_states: Some("cs.tmsg".into()),
            cell_state_blocks: None,
            ground_truth: None,
        }],
    }
}

fn write_frame(dir: &Path, c: usize) {
    let sm: Vec<f32> = (0..16).flat_map(|_| (0..c).map(move |_| 1.0 / c as f32)).collect();
    write_tensor(dir.join("sm.tmsg"), &FrameTensor::new(&[4, 4, c], sm).unwrap()).unwrap();
    write_tensor(dir.join("cs.tmsg"), &FrameTensor::new(&[4, 4, 2], vec![0.5; 32]).unwrap()).unwrap();
}

#[test]
fn valid_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    write_frame(dir.path(), 2);
    let path = dir.path().join("manifest.json");
    write_manifest(&path, &doc(2)).unwrap();
    let m = read_manifest(&path).unwrap();
    assert_eq!((m.height, m.width, m.num_classes, m.num_blocks, m.num_frames), (4, 4, 2, 2, 1));
    assert_eq!(m.load_softmax(0).unwrap().num_classes(), 2);
    assert_eq!(m.load_cell_states(0).unwrap().num_blocks(), 2);
    assert!(m.load_ground_truth(0).unwrap().is_none());
}

#[test]
fn single_class_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_frame(dir.path(), 2);
    let path = dir.path().join("manifest.json");
    write_manifest(&path, &doc(1)).unwrap();
    let err = read_manifest(&path).unwrap_err();
    assert!(matches!(err, Error::Manifest { .. }));
    assert!(err.to_string().contains("num_classes < 2"), "{err}");
}

#[test]
fn truncated_softmax_file_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    write_frame(dir.path(), 3);
    let sm = dir.path().join("sm.tmsg");
    let bytes = fs::read(&sm).unwrap();
    // Drop the last f32 of the payload: h*w*c*4 - 4 data bytes remain.
    fs::write(&sm, &bytes[..bytes.len() - 4]).unwrap();
    let path = dir.path().join("manifest.json");
    write_manifest(&path, &doc(3)).unwrap();
    let err = read_manifest(&path).unwrap_err();
    assert!(err.to_string().contains("sm.tmsg"), "{err}");
}

#[test]
fn unknown_fields_are_schema_violations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    fs::write(&path, r#"{"height":4,"width":4,"num_classes":2,"num_blocks":2,"num_frames":0,"frames":[],"extra":1}"#)
        .unwrap();
    assert!(matches!(read_manifest(&path), Err(Error::Manifest { .. })));
}

#[test]
fn raw_blocks_match_reduced_cell_states() {
    let dir = tempfile::tempdir().unwrap();
    write_frame(dir.path(), 2);
    let (h, w, f, l) = (4, 4, 3, 2);
    let mut reduced = vec![0f32; h * w * l];
    let mut blocks = Vec::new();
    for b in 0..l {
        let raw: Vec<f32> = (0..h * w * f).map(|i| ((i * 7 + b * 3) % 11) as f32 * 0.25).collect();
        for z in 0..h * w {
            reduced[z * l + b] = raw[z * f..(z + 1) * f].iter().sum::<f32>() / f as f32;
        }
        let name = format!("block{b}.tmsg");
        write_tensor(dir.path().join(&name), &FrameTensor::new(&[h, w, f], raw).unwrap()).unwrap();
        blocks.push(name);
    }
    write_tensor(dir.path().join("cs.tmsg"), &FrameTensor::new(&[h, w, l], reduced).unwrap()).unwrap();

    let reduced_path = dir.path().join("reduced.json");
    write_manifest(&reduced_path, &doc(2)).unwrap();
    let mut raw_doc = doc(2);
    raw_doc.frames[0].cell_states = None;
    raw_doc.frames[0].cell_state_blocks = Some(blocks);
    let raw_path = dir.path().join("raw.json");
    write_manifest(&raw_path, &raw_doc).unwrap();

    let a = read_manifest(&reduced_path).unwrap().load_cell_states(0).unwrap();
    let b = read_manifest(&raw_path).unwrap().load_cell_states(0).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
}

#[test]
fn synth_writes_readable_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        height: 4,
        width: 4,
        num_classes: 3,
        num_blocks: 2,
        num_frames: 2,
        num_objects: 1,
        ..SynthConfig::default()
    };
    let path = write_stream(&cfg, dir.path()).unwrap();
    let m = read_manifest(path).unwrap();
    let t = read_tensor_any(&m.frames[0].softmax).unwrap();
    assert_eq!(t.shape(), [4, 4, 3]);
    assert!(read_tensor(&m.frames[0].softmax, &[4, 4, 3]).is_ok());
    assert!(m.load_softmax(1).is_ok());
}
