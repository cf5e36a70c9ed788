//! Directory layout scanning.
//!
//! ```text
//! cdnet2014:  <root>/<category>/<video>/{input/in000001.jpg, groundtruth/gt000001.png, temporalROI.txt}
//! sbi2015:    <root>/<video>/{input, groundtruth}/   frames paired by the number in the file name
//! cityscapes: <root>/leftImg8bit/<split>/<city>/<stem>_leftImg8bit.png
//!             <root>/gtFine/<split>/<city>/<stem>_gtFine_labelIds.png   (gtCoarse also accepted)
//! synthetic:  <root>/manifest.tsv as written by `synth_generate`
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, DatasetKind, SourceId};
use crate::data::synth::MANIFEST_FILE;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame: usize,
    pub input: PathBuf,
    pub groundtruth: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoIndex {
    pub category: String,
    pub name: String,
    /// Sorted by frame number.
    pub frames: Vec<FrameEntry>,
    /// `(width, height)` of the first input frame.
    pub resolution: (u32, u32),
    /// Inclusive frame-number range in which ground truth is evaluated.
    pub eval_range: (usize, usize),
}

impl VideoIndex {
    pub fn eval_frames(&self) -> impl Iterator<Item = &FrameEntry> {
        let (a, b) = self.eval_range;
        self.frames.iter().filter(move |f| f.frame >= a && f.frame <= b)
    }

    pub fn frame(&self, frame: usize) -> Option<&FrameEntry> {
        self.frames
            .binary_search_by_key(&frame, |f| f.frame)
            .ok()
            .map(|i| &self.frames[i])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceIndex {
    pub kind: DatasetKind,
    pub root: PathBuf,
    /// Sorted by (category, name).
    pub videos: Vec<VideoIndex>,
    /// CityScapes label ids treated as foreground.
    pub class_ids: Vec<u8>,
}

impl SequenceIndex {
    pub fn video(&self, category: &str, name: &str) -> Option<&VideoIndex> {
        self.videos.iter().find(|v| v.category == category && v.name == name)
    }

    pub fn source(&self, video: &VideoIndex, frame: usize) -> SourceId {
        SourceId {
            dataset: self.kind,
            category: video.category.clone(),
            video: video.name.clone(),
            frame,
        }
    }

    pub fn categories(&self) -> Vec<String> {
        let mut c: Vec<String> = self.videos.iter().map(|v| v.category.clone()).collect();
        c.dedup();
        c
    }

    /// Keeps only the listed categories and videos (an empty list keeps all).
    pub fn restrict(&mut self, categories: &[String], videos: &[String]) -> Result<(), DataError> {
        for c in categories {
            if !self.videos.iter().any(|v| &v.category == c) {
                return Err(DataError::Selection(format!("category `{c}` not found under {}", self.root.display())));
            }
        }
        for n in videos {
            if !self.videos.iter().any(|v| &v.name == n) {
                return Err(DataError::Selection(format!("video `{n}` not found under {}", self.root.display())));
            }
        }
        self.videos.retain(|v| {
            (categories.is_empty() || categories.contains(&v.category)) && (videos.is_empty() || videos.contains(&v.name))
        });
        Ok(())
    }

    /// Sets the CityScapes foreground classes by name; `citizens` stands for
    /// person and rider.
    pub fn with_classes(mut self, names: &[String]) -> Result<Self, DataError> {
        let mut ids = Vec::new();
        for n in names {
            ids.extend(cityscapes_class_ids(n).ok_or_else(|| DataError::UnknownClass(n.clone()))?);
        }
        ids.sort_unstable();
        ids.dedup();
        self.class_ids = ids;
        Ok(self)
    }
}

const CITYSCAPES_CLASSES: &[(&str, u8)] = &[
    ("unlabeled", 0),
    ("ego vehicle", 1),
    ("rectification border", 2),
    ("out of roi", 3),
    ("static", 4),
    ("dynamic", 5),
    ("ground", 6),
    ("road", 7),
    ("sidewalk", 8),
    ("parking", 9),
    ("rail track", 10),
    ("building", 11),
    ("wall", 12),
    ("fence", 13),
    ("guard rail", 14),
    ("bridge", 15),
    ("tunnel", 16),
    ("pole", 17),
    ("polegroup", 18),
    ("traffic light", 19),
    ("traffic sign", 20),
    ("vegetation", 21),
    ("terrain", 22),
    ("sky", 23),
    ("person", 24),
    ("rider", 25),
    ("car", 26),
    ("truck", 27),
    ("bus", 28),
    ("caravan", 29),
    ("trailer", 30),
    ("train", 31),
    ("motorcycle", 32),
    ("bicycle", 33),
];

/// Highest valid CityScapes label id.
pub const CITYSCAPES_MAX_ID: u8 = 33;
/// Label ids at or below this are void and excluded from evaluation.
pub const CITYSCAPES_VOID_MAX: u8 = 3;

pub fn cityscapes_class_ids(name: &str) -> Option<Vec<u8>> {
    let key = name.trim().to_ascii_lowercase().replace(['_', '-'], " ");
    if key == "citizens" {
        return Some(vec![24, 25]);
    }
    CITYSCAPES_CLASSES
        .iter()
        .find(|(n, _)| *n == key)
        .map(|&(_, id)| vec![id])
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io(dir)))
        .collect::<Result<_, _>>()?;
    v.sort();
    Ok(v)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    Ok(sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect())
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

/// Last run of digits in the file stem.
pub fn frame_number(p: &Path) -> Option<usize> {
    let stem = p.file_stem()?.to_str()?;
    let end = stem.rfind(|c: char| c.is_ascii_digit())? + 1;
    let start = stem[..end]
        .rfind(|c: char| !c.is_ascii_digit())
        .map_or(0, |i| i + 1);
    stem[start..end].parse().ok()
}

fn numbered_images(dir: &Path) -> Result<BTreeMap<usize, PathBuf>, DataError> {
    let mut out = BTreeMap::new();
    for p in sorted_entries(dir)? {
        if p.is_file() && is_image(&p) {
            if let Some(n) = frame_number(&p) {
                out.entry(n).or_insert(p);
            }
        }
    }
    Ok(out)
}

fn dimensions(path: &Path) -> Result<(u32, u32), DataError> {
    image::image_dimensions(path).map_err(|e| DataError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn name_of(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn paired_video(category: String, dir: &Path, roi: Option<(usize, usize)>) -> Result<VideoIndex, DataError> {
    let name = name_of(dir);
    let input_dir = dir.join("input");
    let gt_dir = dir.join("groundtruth");
    if !input_dir.is_dir() {
        return Err(DataError::Scan {
            path: dir.to_path_buf(),
            reason: format!("video `{name}` has no input/ directory"),
        });
    }
    if !gt_dir.is_dir() {
        return Err(DataError::Scan {
            path: dir.to_path_buf(),
            reason: format!("video `{name}` has no groundtruth/ directory"),
        });
    }
    let inputs = numbered_images(&input_dir)?;
    let gts = numbered_images(&gt_dir)?;
    let mut frames = Vec::new();
    for (n, gt) in gts {
        match inputs.get(&n) {
            Some(input) => frames.push(FrameEntry {
                frame: n,
                input: input.clone(),
                groundtruth: gt,
            }),
            None => log::warn!("{}: ground truth without input frame, skipped", gt.display()),
        }
    }
    finish_video(category, name, dir, frames, roi)
}

fn finish_video(
    category: String,
    name: String,
    dir: &Path,
    frames: Vec<FrameEntry>,
    roi: Option<(usize, usize)>,
) -> Result<VideoIndex, DataError> {
    let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
        return Err(DataError::Scan {
            path: dir.to_path_buf(),
            reason: format!("video `{name}` has no pairable frames"),
        });
    };
    let bounds = (first.frame, last.frame);
    let eval_range = match roi {
        Some((a, b)) => (a.max(bounds.0), b.min(bounds.1)),
        None => bounds,
    };
    let resolution = dimensions(&first.input)?;
    Ok(VideoIndex {
        category,
        name,
        frames,
        resolution,
        eval_range,
    })
}

fn temporal_roi(dir: &Path) -> Result<Option<(usize, usize)>, DataError> {
    let path = dir.join("temporalROI.txt");
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let nums: Vec<usize> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| DataError::Scan {
            path: path.clone(),
            reason: format!("bad temporal ROI: {e}"),
        })?;
    match nums[..] {
        [a, b] if a <= b => Ok(Some((a, b))),
        _ => Err(DataError::Scan {
            path,
            reason: "temporal ROI must be two ordered frame numbers".into(),
        }),
    }
}

fn scan_cdnet(root: &Path) -> Result<Vec<VideoIndex>, DataError> {
    let mut videos = Vec::new();
    for cat in subdirs(root)? {
        for vid in subdirs(&cat)? {
            let roi = temporal_roi(&vid)?;
            videos.push(paired_video(name_of(&cat), &vid, roi)?);
        }
    }
    Ok(videos)
}

fn scan_sbi(root: &Path) -> Result<Vec<VideoIndex>, DataError> {
    subdirs(root)?
        .iter()
        .map(|vid| paired_video(name_of(vid), vid, None))
        .collect()
}

fn scan_cityscapes(root: &Path) -> Result<Vec<VideoIndex>, DataError> {
    let img_root = root.join("leftImg8bit");
    if !img_root.is_dir() {
        return Err(DataError::Scan {
            path: root.to_path_buf(),
            reason: "no leftImg8bit/ directory".into(),
        });
    }
    let gt_root = ["gtFine", "gtCoarse"]
        .iter()
        .map(|d| (d, root.join(d)))
        .find(|(_, p)| p.is_dir())
        .ok_or_else(|| DataError::Scan {
            path: root.to_path_buf(),
            reason: "no gtFine/ or gtCoarse/ directory".into(),
        })?;
    let mut videos = Vec::new();
    for split in subdirs(&img_root)? {
        for city in subdirs(&split)? {
            let gt_dir = gt_root.1.join(name_of(&split)).join(name_of(&city));
            let mut frames = Vec::new();
            for img in sorted_entries(&city)? {
                let file = name_of(&img);
                let Some(stem) = file.strip_suffix("_leftImg8bit.png") else { continue };
                let gt = gt_dir.join(format!("{stem}_{}_labelIds.png", gt_root.0));
                if gt.is_file() {
                    frames.push(FrameEntry {
                        frame: frames.len() + 1,
                        input: img,
                        groundtruth: gt,
                    });
                } else {
                    log::warn!("{}: no annotation, skipped", img.display());
                }
            }
            videos.push(finish_video(name_of(&split), name_of(&city), &city, frames, None)?);
        }
    }
    Ok(videos)
}

fn scan_synthetic(root: &Path) -> Result<Vec<VideoIndex>, DataError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let mut category = "synthetic".to_string();
    let mut name = name_of(root);
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.trim().split_once('=') {
                match k.trim() {
                    "category" => category = v.trim().to_string(),
                    "video" => name = v.trim().to_string(),
                    _ => {}
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| DataError::Scan {
            path: path.clone(),
            reason: format!("line {}: {reason}", lineno + 1),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(bad("expected frame, image and mask columns"));
        }
        let frame = cols[0].parse().map_err(|_| bad("frame id is not a number"))?;
        frames.push(FrameEntry {
            frame,
            input: root.join(cols[1]),
            groundtruth: root.join(cols[2]),
        });
    }
    frames.sort_by_key(|f| f.frame);
    Ok(vec![finish_video(category, name, root, frames, None)?])
}

pub fn scan(root: &Path, kind: DatasetKind) -> Result<SequenceIndex, DataError> {
    if !root.is_dir() {
        return Err(DataError::Scan {
            path: root.to_path_buf(),
            reason: "dataset root does not exist".into(),
        });
    }
    let mut videos = match kind {
        DatasetKind::Cdnet2014 => scan_cdnet(root)?,
        DatasetKind::Sbi2015 => scan_sbi(root)?,
        DatasetKind::Cityscapes => scan_cityscapes(root)?,
        DatasetKind::Synthetic => scan_synthetic(root)?,
    };
    if videos.is_empty() {
        return Err(DataError::Scan {
            path: root.to_path_buf(),
            reason: format!("no {} videos found", kind.name()),
        });
    }
    videos.sort_by(|a, b| (&a.category, &a.name).cmp(&(&b.category, &b.name)));
    Ok(SequenceIndex {
        kind,
        root: root.to_path_buf(),
        videos,
        class_ids: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_numbers() {
        assert_eq!(frame_number(Path::new("in000123.jpg")), Some(123));
        assert_eq!(frame_number(Path::new("gt_7.png")), Some(7));
        assert_eq!(frame_number(Path::new("image.png")), None);
    }

    #[test]
    fn class_names() {
        assert_eq!(cityscapes_class_ids("road"), Some(vec![7]));
        assert_eq!(cityscapes_class_ids("Traffic_Sign"), Some(vec![20]));
        assert_eq!(cityscapes_class_ids("citizens"), Some(vec![24, 25]));
        assert_eq!(cityscapes_class_ids("dragon"), None);
    }
}
