use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scan::{SequenceIndex, VideoIndex};
use super::{DataError, SourceId};

/// `n` distinct frame numbers drawn uniformly from the video's evaluation
/// range, sorted. Returns every frame (with a warning) when fewer exist.
pub fn select_video_frames(video: &VideoIndex, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, DataError> {
    if n == 0 {
        return Err(DataError::Selection("frame count must be at least 1".into()));
    }
    let pool: Vec<usize> = video.eval_frames().map(|f| f.frame).collect();
    if pool.is_empty() {
        return Err(DataError::Selection(format!(
            "video `{}/{}` has an empty evaluation range",
            video.category, video.name
        )));
    }
    if n >= pool.len() {
        if n > pool.len() {
            log::warn!(
                "{}/{}: requested {n} frames, only {} available; using all",
                video.category,
                video.name,
                pool.len()
            );
        }
        return Ok(pool);
    }
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Per-video selection over a whole index. Each video draws from its own
/// stream keyed by its name, so the choice for one video does not depend on
/// which other videos are present.
pub fn select_frames(index: &SequenceIndex, n: usize, seed: u64) -> Result<Vec<SourceId>, DataError> {
    let mut out = Vec::new();
    for video in &index.videos {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_of(&video.category, &video.name));
        for f in select_video_frames(video, n, &mut rng)? {
            out.push(index.source(video, f));
        }
    }
    Ok(out)
}

/// Stable per-video stream id (FNV-1a of `category/name`).
fn stream_of(category: &str, name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in category.bytes().chain([b'/']).chain(name.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
