//! Frame and ground-truth loading with resampling to the network size.

use std::path::Path;

use image::imageops::FilterType;

use super::scan::{SequenceIndex, CITYSCAPES_MAX_ID, CITYSCAPES_VOID_MAX};
use super::{DataError, DatasetKind, FrameImage, FramePair, SourceId};
use crate::mask::{Label, LabelMask};

/// Change-detection gray levels: 255 foreground, 0 and 50 (shadow)
/// background, 85 (outside ROI) and 170 (unknown motion) ignored.
pub fn gray_label(v: u8) -> Option<Label> {
    match v {
        255 => Some(Label::Foreground),
        0 | 50 => Some(Label::Background),
        85 | 170 => Some(Label::Ignore),
        _ => None,
    }
}

fn open(path: &Path) -> Result<image::DynamicImage, DataError> {
    image::open(path).map_err(|e| DataError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Bilinear resample to `size x size`, scaled to `[0, 1]`.
pub fn load_image(path: &Path, size: usize) -> Result<FrameImage, DataError> {
    let mut rgb = open(path)?.to_rgb8();
    if rgb.width() as usize != size || rgb.height() as usize != size {
        rgb = image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle);
    }
    let pixels = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Ok(FrameImage::new(size, size, pixels))
}

/// Nearest-neighbour resample of a label grid.
pub fn resize_nearest(mask: &LabelMask, width: usize, height: usize) -> LabelMask {
    if mask.width == width && mask.height == height {
        return mask.clone();
    }
    let mut labels = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = ((y * mask.height) as f64 / height as f64 + mask.height as f64 / height as f64 / 2.0) as usize;
        let sy = sy.min(mask.height - 1);
        for x in 0..width {
            let sx = ((x * mask.width) as f64 / width as f64 + mask.width as f64 / width as f64 / 2.0) as usize;
            labels.push(mask.labels[sy * mask.width + sx.min(mask.width - 1)]);
        }
    }
    LabelMask::new(width, height, labels)
}

fn load_mask(path: &Path, kind: DatasetKind, class_ids: &[u8], size: usize) -> Result<LabelMask, DataError> {
    let gray = open(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut labels = Vec::with_capacity(w * h);
    for &v in gray.as_raw() {
        let label = match kind {
            DatasetKind::Cityscapes => {
                if v > CITYSCAPES_MAX_ID {
                    None
                } else if v <= CITYSCAPES_VOID_MAX {
                    Some(Label::Ignore)
                } else if class_ids.contains(&v) {
                    Some(Label::Foreground)
                } else {
                    Some(Label::Background)
                }
            }
            _ => gray_label(v),
        };
        labels.push(label.ok_or_else(|| DataError::Label {
            path: path.to_path_buf(),
            value: v,
        })?);
    }
    Ok(resize_nearest(&LabelMask::new(w, h, labels), size, size))
}

pub fn load_pair(index: &SequenceIndex, id: &SourceId, target_size: usize) -> Result<FramePair, DataError> {
    let entry = index
        .video(&id.category, &id.video)
        .and_then(|v| v.frame(id.frame))
        .ok_or_else(|| DataError::UnknownFrame(id.clone()))?;
    if index.kind == DatasetKind::Cityscapes && index.class_ids.is_empty() {
        return Err(DataError::Selection("no CityScapes foreground classes configured".into()));
    }
    Ok(FramePair {
        image: load_image(&entry.input, target_size)?,
        mask: load_mask(&entry.groundtruth, index.kind, &index.class_ids, target_size)?,
        source: id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Label::*;

    #[test]
    fn gray_levels() {
        assert_eq!(gray_label(170), Some(Ignore));
        assert_eq!(gray_label(85), Some(Ignore));
        assert_eq!(gray_label(50), Some(Background));
        assert_eq!(gray_label(128), None);
    }

    #[test]
    fn nearest_upsample_replicates() {
        let m = LabelMask::new(2, 1, vec![Foreground, Ignore]);
        let r = resize_nearest(&m, 4, 2);
        assert_eq!(
            r.labels,
            vec![Foreground, Foreground, Ignore, Ignore, Foreground, Foreground, Ignore, Ignore]
        );
    }
}
