//! Thresholding and jet heatmap overlays.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::SourceId;
use crate::mask::BinaryMask;

#[derive(Debug, thiserror::Error)]
pub enum VizError {
    #[error("threshold {0} is outside [0, 1]")]
    Threshold(f64),
    #[error("blend factor {0} is outside [0, 1]")]
    Alpha(f64),
    #[error("probability {value} at pixel {index} is outside [0, 1]")]
    Range { index: usize, value: f32 },
    #[error("raw image has {raw} pixels, heatmap has {heat}")]
    Dimension { raw: usize, heat: usize },
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

pub type Rgb = [u8; 3];

/// Jet anchors as (value, colour).
pub const JET: [(f64, [f64; 3]); 5] = [
    (0.0, [0.0, 0.0, 255.0]),
    (0.25, [0.0, 255.0, 255.0]),
    (0.5, [0.0, 255.0, 0.0]),
    (0.75, [255.0, 255.0, 0.0]),
    (1.0, [255.0, 0.0, 0.0]),
];

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.5;

fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Foreground wherever `p >= theta`.
pub fn threshold(probs: &[f32], width: usize, height: usize, theta: f64) -> Result<BinaryMask, VizError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(VizError::Threshold(theta));
    }
    Ok(BinaryMask::new(
        width,
        height,
        probs.iter().map(|&p| p as f64 >= theta).collect(),
    ))
}

pub fn jet(p: f64) -> Rgb {
    let i = JET.windows(2).position(|w| p <= w[1].0).unwrap_or(JET.len() - 2);
    let ((v0, c0), (v1, c1)) = (JET[i], JET[i + 1]);
    let t = (p - v0) / (v1 - v0);
    [0, 1, 2].map(|k| round_half_up(c0[k] + t * (c1[k] - c0[k])))
}

pub fn heatmap(probs: &[f32]) -> Result<Vec<Rgb>, VizError> {
    probs
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if (0.0..=1.0).contains(&value) {
                Ok(jet(value as f64))
            } else {
                Err(VizError::Range { index, value })
            }
        })
        .collect()
}

/// `round((1 - alpha) * raw + alpha * heat)` per channel.
pub fn blend(raw: &[Rgb], heat: &[Rgb], alpha: f64) -> Result<Vec<Rgb>, VizError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(VizError::Alpha(alpha));
    }
    if raw.len() != heat.len() {
        return Err(VizError::Dimension {
            raw: raw.len(),
            heat: heat.len(),
        });
    }
    Ok(raw
        .iter()
        .zip(heat)
        .map(|(r, h)| [0, 1, 2].map(|k| round_half_up((1.0 - alpha) * r[k] as f64 + alpha * h[k] as f64)))
        .collect())
}

fn save(path: &Path, buf: &[u8], w: usize, h: usize, color: image::ColorType) -> Result<(), VizError> {
    image::save_buffer(path, buf, w as u32, h as u32, color).map_err(|e| VizError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Visual {
    Overlay(Vec<Rgb>),
    Binary(BinaryMask),
}

/// One output image for a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameVisual {
    pub source: SourceId,
    pub width: usize,
    pub height: usize,
    pub visual: Visual,
}

impl FrameVisual {
    /// `<stem>_overlay.png` or `<stem>_mask.png`.
    pub fn file_name(&self) -> String {
        let kind = match self.visual {
            Visual::Overlay(_) => "overlay",
            Visual::Binary(_) => "mask",
        };
        format!("{}_{kind}.png", self.source.stem())
    }
}

/// Writes one PNG per entry, overwriting existing files; returns the paths
/// in order.
pub fn write_outputs(frames: &[FrameVisual], out: &Path) -> Result<Vec<PathBuf>, VizError> {
    fs::create_dir_all(out).map_err(|e| VizError::Io {
        path: out.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut paths = Vec::with_capacity(frames.len());
    for f in frames {
        let path = out.join(f.file_name());
        match &f.visual {
            Visual::Overlay(rgb) => {
                let flat: Vec<u8> = rgb.iter().flatten().copied().collect();
                save(&path, &flat, f.width, f.height, image::ColorType::Rgb8)?;
            }
            Visual::Binary(m) => {
                let gray: Vec<u8> = m.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
                save(&path, &gray, f.width, f.height, image::ColorType::L8)?;
            }
        }
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anchors_and_interpolation() {
        assert_eq!(jet(0.0), [0, 0, 255]);
        assert_eq!(jet(0.125), [0, 128, 255]);
        assert_eq!(jet(0.5), [0, 255, 0]);
        assert_eq!(jet(1.0), [255, 0, 0]);
    }

    #[test]
    fn blend_example() {
        assert_eq!(blend(&[[100; 3]], &[[255, 0, 0]], 0.5).unwrap(), vec![[178, 50, 50]]);
        assert_eq!(blend(&[[1, 2, 3]], &[[9, 9, 9]], 0.0).unwrap(), vec![[1, 2, 3]]);
        assert_eq!(blend(&[[1, 2, 3]], &[[9, 9, 9]], 1.0).unwrap(), vec![[9, 9, 9]]);
        assert!(blend(&[[0; 3]], &[], 0.5).is_err());
    }

    #[test]
    fn threshold_rules() {
        let m = threshold(&[0.2, 0.7, 0.5], 3, 1, 0.5).unwrap();
        assert_eq!(m.bits, vec![false, true, true]);
        assert!(threshold(&[0.0, 0.3], 2, 1, 0.0).unwrap().bits.iter().all(|&b| b));
        assert!(matches!(threshold(&[0.1], 1, 1, 1.5), Err(VizError::Threshold(_))));
    }

    #[test]
    fn heatmap_range() {
        assert!(matches!(heatmap(&[0.5, 1.01]), Err(VizError::Range { index: 1, .. })));
    }

    proptest! {
        #[test]
        fn blend_identity(c in any::<[u8; 3]>(), a in 0.0f64..=1.0) {
            prop_assert_eq!(blend(&[c], &[c], a).unwrap(), vec![c]);
        }

        #[test]
        fn red_rises_on_top_band(a in 0.75f64..=1.0, b in 0.75f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(jet(lo)[0] <= jet(hi)[0]);
        }

        #[test]
        fn blue_constant_on_bottom_band(a in 0.0f64..=0.25, b in 0.0f64..=0.25) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(jet(lo)[2] >= jet(hi)[2]);
        }
    }
}
