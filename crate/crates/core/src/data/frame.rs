use serde::{Deserialize, Serialize};

use crate::mask::LabelMask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Cdnet2014,
    Sbi2015,
    Cityscapes,
    Synthetic,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Cdnet2014 => "cdnet2014",
            DatasetKind::Sbi2015 => "sbi2015",
            DatasetKind::Cityscapes => "cityscapes",
            DatasetKind::Synthetic => "synthetic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceId {
    pub dataset: DatasetKind,
    pub category: String,
    pub video: String,
    pub frame: usize,
}

impl SourceId {
    /// File-name friendly identifier, e.g. `baseline_highway_000123`.
    pub fn stem(&self) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
                .collect()
        };
        format!("{}_{}_{:06}", clean(&self.category), clean(&self.video), self.frame)
    }
}

/// RGB image with interleaved channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl FrameImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), width * height * 3);
        Self { width, height, pixels }
    }

    pub fn to_rgb8(&self) -> Vec<[u8; 3]> {
        self.pixels
            .chunks_exact(3)
            .map(|p| {
                let q = |v: f32| (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8;
                [q(p[0]), q(p[1]), q(p[2])]
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub image: FrameImage,
    pub mask: LabelMask,
    pub source: SourceId,
}

/// Stacks frames into an `N x 3 x H x W` network input.
pub fn batch_tensor(frames: &[&FramePair]) -> Tensor {
    let (h, w) = (frames[0].image.height, frames[0].image.width);
    let samples: Vec<&[f32]> = frames.iter().map(|f| f.image.pixels.as_slice()).collect();
    Tensor::from_hwc_batch(&samples, h, w, 3)
}
