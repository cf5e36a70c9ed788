//! Dataset scanning, frame loading and selection, and synthetic sequences.

use std::path::PathBuf;

mod frame;
mod load;
mod scan;
mod select;
mod synth;

pub use frame::{batch_tensor, DatasetKind, FrameImage, FramePair, SourceId};
pub use load::{gray_label, load_image, load_pair, resize_nearest};
pub use scan::{cityscapes_class_ids, frame_number, scan, FrameEntry, SequenceIndex, VideoIndex};
pub use select::{select_frames, select_video_frames};
pub use synth::{parse_geometry, synth_generate, synth_render, BoxGeom, SynthFrame, SynthSpec, MANIFEST_FILE};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Scan { path: PathBuf, reason: String },
    #[error("{path}: unknown label value {value}")]
    Label { path: PathBuf, value: u8 },
    #[error("frame selection: {0}")]
    Selection(String),
    #[error("invalid synthetic spec field `{field}`: {reason}")]
    Spec { field: String, reason: String },
    #[error("frame {0:?} is not in the index")]
    UnknownFrame(SourceId),
    #[error("unknown CityScapes class `{0}`")]
    UnknownClass(String),
}
