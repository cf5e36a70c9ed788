use std::fs;

use fgseg::data::{DatasetKind, SourceId};
use fgseg::viz::{blend, heatmap, threshold, write_outputs, FrameVisual, Visual, VizError};

fn source(frame: usize) -> SourceId {
    SourceId {
        dataset: DatasetKind::Cdnet2014,
        category: "baseline".into(),
        video: "highway".into(),
        frame,
    }
}

fn overlay(frame: usize) -> FrameVisual {
    let (w, h) = (6, 4);
    let probs: Vec<f32> = (0..w * h).map(|i| i as f32 / (w * h - 1) as f32).collect();
    let raw = vec![[90, 120, 30]; w * h];
    FrameVisual {
        source: source(frame),
        width: w,
        height: h,
        visual: Visual::Overlay(blend(&raw, &heatmap(&probs).unwrap(), 0.5).unwrap()),
    }
}

#[test]
fn one_file_per_frame_with_stable_names() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<FrameVisual> = (1..=3).map(overlay).collect();
    let first = write_outputs(&frames, dir.path()).unwrap();
    assert_eq!(first.len(), 3);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 3);
    let names: Vec<String> = first.iter().map(|p| p.file_name().unwrap().to_string_lossy().into()).collect();
    assert_eq!(names[0], "baseline_highway_000001_overlay.png");
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();

    let second = write_outputs(&frames, dir.path()).unwrap();
    assert_eq!(first, second);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 3);
    for (p, b) in second.iter().zip(&bytes) {
        assert_eq!(&fs::read(p).unwrap(), b);
    }
}

#[test]
fn written_images_decode_to_the_visuals() {
    let dir = tempfile::tempdir().unwrap();
    let probs = [0.1f32, 0.7, 0.5, 0.49, 0.9, 0.0];
    let mask = threshold(&probs, 3, 2, 0.5).unwrap();
    assert_eq!(mask.bits, [false, true, true, false, true, false]);
    let frames = vec![
        overlay(7),
        FrameVisual {
            source: source(7),
            width: 3,
            height: 2,
            visual: Visual::Binary(mask),
        },
    ];
    let paths = write_outputs(&frames, dir.path()).unwrap();
    assert!(paths[1].ends_with("baseline_highway_000007_mask.png"));

    let rgb = image::open(&paths[0]).unwrap().to_rgb8();
    let Visual::Overlay(want) = &frames[0].visual else { unreachable!() };
    let got: Vec<[u8; 3]> = rgb.pixels().map(|p| p.0).collect();
    assert_eq!(&got, want);

    let gray = image::open(&paths[1]).unwrap().to_luma8();
    assert_eq!(gray.as_raw(), &[0, 255, 255, 0, 255, 0]);
}

#[test]
fn a_file_in_place_of_the_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("out");
    fs::write(&blocker, b"not a directory").unwrap();
    let err = write_outputs(&[overlay(1)], &blocker).unwrap_err();
    assert!(matches!(err, VizError::Io { ref path, .. } if path == &blocker), "{err}");
}

#[test]
fn out_of_range_inputs_are_rejected() {
    assert!(matches!(threshold(&[0.5; 4], 2, 2, 1.5), Err(VizError::Threshold(_))));
    assert!(matches!(heatmap(&[0.2, 1.2]), Err(VizError::Range { index: 1, .. })));
    assert!(matches!(blend(&[[0; 3]], &[[0; 3]], -0.1), Err(VizError::Alpha(_))));
    assert!(write_outputs(&[], tempfile::tempdir().unwrap().path()).unwrap().is_empty());
}
