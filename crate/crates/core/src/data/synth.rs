//! Procedural moving-object sequences with exact ground truth.
//!
//! Objects are axis-aligned rectangles that bounce inside the scene. Camera
//! jitter shifts the whole rendered frame, so boxes can leave the image and
//! are clipped in the mask.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    /// Frames before skipping.
    pub frame_count: usize,
    pub object_count: usize,
    /// Side length range in pixels, inclusive.
    pub object_size: (usize, usize),
    /// Speed range in pixels per base frame.
    pub object_speed: (f64, f64),
    pub texture_seed: u64,
    /// Brightness multiplier swings by up to this fraction over the sequence.
    pub lighting_drift: f64,
    /// Keep every k-th base frame.
    pub frame_skip: usize,
    /// Maximum whole-frame translation in pixels.
    pub jitter: usize,
    pub category: String,
    pub video: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frame_count: 8,
            object_count: 1,
            object_size: (12, 24),
            object_speed: (1.0, 4.0),
            texture_seed: 0,
            lighting_drift: 0.0,
            frame_skip: 1,
            jitter: 0,
            category: "synthetic".into(),
            video: "moving_boxes".into(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |field: &str, reason: &str| {
            Err(DataError::Spec {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if self.width == 0 || self.height == 0 || self.width % 8 != 0 || self.height % 8 != 0 {
            return bad("width/height", "must be positive multiples of 8");
        }
        if self.frame_count == 0 {
            return bad("frame_count", "must be at least 1");
        }
        if self.frame_skip == 0 {
            return bad("frame_skip", "must be at least 1");
        }
        let (lo, hi) = self.object_size;
        if lo == 0 || lo > hi || hi > self.width.min(self.height) {
            return bad("object_size", "needs 1 <= min <= max <= frame side");
        }
        let (s0, s1) = self.object_speed;
        if !(s0 >= 0.0 && s0 <= s1 && s1.is_finite()) {
            return bad("object_speed", "needs 0 <= min <= max");
        }
        if !(0.0..1.0).contains(&self.lighting_drift) {
            return bad("lighting_drift", "must be in [0, 1)");
        }
        Ok(())
    }

    pub fn emitted_frames(&self) -> usize {
        self.frame_count.div_ceil(self.frame_skip)
    }
}

/// Rectangle in image coordinates, end-exclusive, before clipping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxGeom {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl BoxGeom {
    /// Pixel count inside a `width x height` frame.
    pub fn clipped_area(&self, width: usize, height: usize) -> usize {
        let w = (self.x1.min(width as i64) - self.x0.max(0)).max(0);
        let h = (self.y1.min(height as i64) - self.y0.max(0)).max(0);
        (w * h) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthFrame {
    /// 1-based emitted frame number.
    pub frame: usize,
    /// 8-bit RGB, interleaved.
    pub rgb: Vec<u8>,
    pub mask: Vec<bool>,
    pub boxes: Vec<BoxGeom>,
}

struct Object {
    w: usize,
    h: usize,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    color: [f32; 3],
}

/// Position on a segment `[0, len]` after bouncing off both ends.
fn bounce(p: f64, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * len;
    let m = p.rem_euclid(period);
    if m <= len {
        m
    } else {
        period - m
    }
}

fn texture(spec: &SynthSpec) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let waves: Vec<[f32; 4]> = (0..9)
        .map(|_| {
            [
                rng.gen_range(1.0..5.0),
                rng.gen_range(1.0..5.0),
                rng.gen_range(0.0..std::f32::consts::TAU),
                rng.gen_range(0.03..0.08),
            ]
        })
        .collect();
    let (w, h) = (spec.width, spec.height);
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f32 / w as f32, y as f32 / h as f32);
            for c in 0..3 {
                let mut s = 0.5;
                for wv in &waves[c * 3..c * 3 + 3] {
                    s += wv[3] * (std::f32::consts::TAU * (wv[0] * u + wv[1] * v) + wv[2]).sin();
                }
                s += rng.gen_range(-0.03..0.03);
                out.push(s);
            }
        }
    }
    out
}

fn contrast_channel(rng: &mut ChaCha8Rng) -> f32 {
    if rng.gen_bool(0.5) {
        rng.gen_range(0.02..0.2)
    } else {
        rng.gen_range(0.8..0.98)
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// Renders the sequence in memory.
pub fn synth_render(spec: &SynthSpec, seed: u64) -> Result<Vec<SynthFrame>, DataError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let tex = texture(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects: Vec<Object> = (0..spec.object_count)
        .map(|_| {
            let ow = rng.gen_range(spec.object_size.0..=spec.object_size.1);
            let oh = rng.gen_range(spec.object_size.0..=spec.object_size.1);
            let speed = if spec.object_speed.1 > spec.object_speed.0 {
                rng.gen_range(spec.object_speed.0..spec.object_speed.1)
            } else {
                spec.object_speed.0
            };
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            Object {
                w: ow,
                h: oh,
                x: rng.gen_range(0.0..=(w - ow) as f64),
                y: rng.gen_range(0.0..=(h - oh) as f64),
                vx: speed * angle.cos(),
                vy: speed * angle.sin(),
                color: [
                    contrast_channel(&mut rng),
                    contrast_channel(&mut rng),
                    contrast_channel(&mut rng),
                ],
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(spec.emitted_frames());
    for (i, t) in (0..spec.frame_count).step_by(spec.frame_skip).enumerate() {
        let (jx, jy) = if spec.jitter > 0 {
            let j = spec.jitter as i64;
            (rng.gen_range(-j..=j), rng.gen_range(-j..=j))
        } else {
            (0, 0)
        };
        let light = 1.0
            + spec.lighting_drift * (std::f64::consts::TAU * t as f64 / spec.frame_count as f64).sin();
        let boxes: Vec<BoxGeom> = objects
            .iter()
            .map(|o| {
                let x = bounce(o.x + o.vx * t as f64, (w - o.w) as f64).round() as i64 + jx;
                let y = bounce(o.y + o.vy * t as f64, (h - o.h) as f64).round() as i64 + jy;
                BoxGeom {
                    x0: x,
                    y0: y,
                    x1: x + o.w as i64,
                    y1: y + o.h as i64,
                }
            })
            .collect();
        let mut rgb = Vec::with_capacity(w * h * 3);
        let mut mask = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let hit = boxes.iter().rposition(|b| {
                    let (xi, yi) = (x as i64, y as i64);
                    xi >= b.x0 && xi < b.x1 && yi >= b.y0 && yi < b.y1
                });
                let color = match hit {
                    Some(k) => objects[k].color,
                    None => {
                        let sx = (x as i64 - jx).rem_euclid(w as i64) as usize;
                        let sy = (y as i64 - jy).rem_euclid(h as i64) as usize;
                        let p = (sy * w + sx) * 3;
                        [tex[p], tex[p + 1], tex[p + 2]]
                    }
                };
                for c in color {
                    rgb.push(quantize((c as f64 * light) as f32));
                }
                mask.push(hit.is_some());
            }
        }
        frames.push(SynthFrame {
            frame: i + 1,
            rgb,
            mask,
            boxes,
        });
    }
    Ok(frames)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn save(path: &Path, buf: &[u8], w: usize, h: usize, color: image::ColorType) -> Result<(), DataError> {
    image::save_buffer(path, buf, w as u32, h as u32, color).map_err(|e| match e {
        image::ImageError::IoError(source) => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => DataError::Image {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

/// Writes `input/`, `groundtruth/` and the manifest under `out`; returns
/// the manifest path.
pub fn synth_generate(spec: &SynthSpec, seed: u64, out: &Path) -> Result<PathBuf, DataError> {
    let frames = synth_render(spec, seed)?;
    let (w, h) = (spec.width, spec.height);
    for d in ["input", "groundtruth"] {
        let dir = out.join(d);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
    }
    let mut manifest = String::new();
    writeln!(manifest, "# fgseg synthetic sequence v1").unwrap();
    writeln!(manifest, "# size={w}x{h}").unwrap();
    writeln!(manifest, "# category={}", spec.category).unwrap();
    writeln!(manifest, "# video={}", spec.video).unwrap();
    writeln!(manifest, "# seed={seed}").unwrap();
    for f in &frames {
        let img = format!("input/in{:06}.png", f.frame);
        let gt = format!("groundtruth/gt{:06}.png", f.frame);
        save(&out.join(&img), &f.rgb, w, h, image::ColorType::Rgb8)?;
        let gray: Vec<u8> = f.mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
        save(&out.join(&gt), &gray, w, h, image::ColorType::L8)?;
        let geom: Vec<String> = f
            .boxes
            .iter()
            .map(|b| format!("{},{},{},{}", b.x0, b.y0, b.x1, b.y1))
            .collect();
        writeln!(manifest, "{}\t{img}\t{gt}\t{}", f.frame, geom.join(";")).unwrap();
    }
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(io(&path))?;
    Ok(path)
}

/// Box geometry column of a manifest line.
pub fn parse_geometry(field: &str) -> Option<Vec<BoxGeom>> {
    if field.trim().is_empty() {
        return Some(Vec::new());
    }
    field
        .split(';')
        .map(|b| {
            let v: Vec<i64> = b.split(',').map(|n| n.trim().parse().ok()).collect::<Option<_>>()?;
            match v[..] {
                [x0, y0, x1, y1] => Some(BoxGeom { x0, y0, x1, y1 }),
                _ => None,
            }
        })
        .collect()
}
