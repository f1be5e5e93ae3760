//! Dataset ingestion: manifests, frame directories, sliding windows, motion
//! channels, and the synthetic fall generator.

mod frames;
mod manifest;
mod synth;

pub use frames::{
    decode_frame, decode_raw, encode_pgm, frame_plane, list_frames, load_frames, motion_channels, motion_plane, read_frame, stack_planes,
    stride_for_fps, window_sampler, Windows,
};
pub use manifest::{filter_subset, load_manifest, parse_tags, Manifest, ManifestRow, Split, KNOWN_TAGS, MANIFEST_COLUMNS};
pub use synth::{synth_clips, write_synth_dataset, Blob, ClipKind, SynthClip, SynthConfig};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::motionflow::{read_flow_file, write_flow_file, FarnebackConfig};
use crate::tensor::Tensor;
use crate::train::Example;

/// Frames per model window.
pub const WINDOW: usize = 10;

/// One labelled window of `T` frames.
#[derive(Clone, Debug)]
pub struct WindowSample {
    /// `(T, H, W, 1)` in `[0, 1]`.
    pub frames: Tensor<f32>,
    /// Optional `(T, H, W, 1)` motion magnitude channel.
    pub motion: Option<Tensor<f32>>,
    pub label: bool,
    pub video_id: String,
    /// 1-based index of the window's first frame in the source video.
    pub start_frame: usize,
}

/// Interleave channel stacks `(T, H, W, 1)…` into `(T, H, W, k)`.
pub fn concat_channels(parts: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("no channels".into()))?;
    let s = first.shape().to_vec();
    if parts.iter().any(|p| p.shape() != s.as_slice()) || s.last() != Some(&1) {
        return Err(Error::InvalidArgument("channel stacks must share a (.., 1) shape".into()));
    }
    let k = parts.len();
    let mut data = Vec::with_capacity(first.len() * k);
    for i in 0..first.len() {
        data.extend(parts.iter().map(|p| p.data()[i]));
    }
    let mut shape = s;
    *shape.last_mut().unwrap() = k;
    Tensor::new(&shape, data)
}

impl WindowSample {
    /// Model input `(T, H, W, Cin)`: thermal, then motion when present.
    pub fn input(&self) -> Result<Tensor<f32>> {
        match &self.motion {
            None => Ok(self.frames.clone()),
            Some(m) => concat_channels(&[&self.frames, m]),
        }
    }

    pub fn to_example(&self) -> Result<Example> {
        Ok(Example {
            x: self.input()?,
            label: self.label,
        })
    }
}

/// Where motion channels come from, if at all.
#[derive(Clone, Debug)]
pub enum MotionSource {
    None,
    /// Estimate flow on the fly.
    Compute(FarnebackConfig),
    /// Read `flow_cache_path(root, video, k)` files written by the flow
    /// extractor.
    Cache(PathBuf),
}

/// Cache file for the flow from frame `k` to frame `k + 1` (1-based).
pub fn flow_cache_path(root: &Path, video_id: &str, k: usize) -> PathBuf {
    root.join(video_id).join(format!("pair_{k:05}.flow"))
}

fn cached_motion(root: &Path, video_id: &str, n: usize, size: (usize, usize)) -> Result<Tensor<f32>> {
    let mut data = vec![0f32; size.0 * size.1];
    for k in 1..n {
        let path = flow_cache_path(root, video_id, k);
        let t = read_flow_file(&path)?;
        if t.shape() != [size.0, size.1] {
            return Err(Error::shape("flow cache", t.shape(), &[size.0, size.1]));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(&[n, size.0, size.1, 1], data)
}

/// Outcome of a flow-cache extraction run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlowCacheStats {
    pub written: usize,
    pub skipped: usize,
}

fn modified(path: &Path) -> Option<std::time::SystemTime> {
    std::fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// A cache file is current when it is at least as new as both frames and
/// holds a plane of the requested extents.
fn cache_current(cache: &Path, frames: [&Path; 2], size: (usize, usize)) -> bool {
    let Some(written) = modified(cache) else {
        return false;
    };
    if frames.iter().any(|f| modified(f).is_none_or(|t| t > written)) {
        return false;
    }
    read_flow_file(cache).is_ok_and(|t| t.shape() == [size.0, size.1])
}

fn extract_video(row: &ManifestRow, root: &Path, size: (usize, usize), cfg: &FarnebackConfig) -> Result<FlowCacheStats> {
    let paths = list_frames(&row.dir)?;
    let mut stats = FlowCacheStats::default();
    let mut prev: Option<crate::imaging::Plane> = None;
    for k in 1..paths.len() {
        let cache = flow_cache_path(root, &row.video_id, k);
        if cache_current(&cache, [&paths[k - 1], &paths[k]], size) {
            stats.skipped += 1;
            prev = None;
            continue;
        }
        let a = match prev.take() {
            Some(p) => p,
            None => read_frame(&paths[k - 1], size)?,
        };
        let b = read_frame(&paths[k], size)?;
        let m = motion_plane(&a, &b, cfg)?;
        if let Some(dir) = cache.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_flow_file(&cache, &m.to_tensor())?;
        stats.written += 1;
        prev = Some(b);
    }
    Ok(stats)
}

/// Write the motion channel of every consecutive frame pair of every video
/// under `root`, skipping files that are already current.
pub fn extract_flow_cache(manifest: &Manifest, root: &Path, size: (usize, usize), cfg: &FarnebackConfig) -> Result<FlowCacheStats> {
    cfg.validate()?;
    let per_video = crate::par::map_range(manifest.rows.len(), |i| {
        let row = &manifest.rows[i];
        extract_video(row, root, size, cfg).map_err(|e| Error::Manifest(format!("video {}: {e}", row.video_id)))
    });
    let mut total = FlowCacheStats::default();
    for s in per_video {
        let s = s?;
        total.written += s.written;
        total.skipped += s.skipped;
    }
    Ok(total)
}

/// Windows of one video: load and resize frames, attach motion, stride to
/// 4 fps, and cut `WINDOW`-frame windows every `hop` frames.
pub fn video_samples(row: &ManifestRow, size: (usize, usize), motion: &MotionSource, hop: usize) -> Result<Vec<WindowSample>> {
    let frames = load_frames(&row.dir, size)?;
    let n = frames.shape()[0];
    let motion = match motion {
        MotionSource::None => None,
        MotionSource::Compute(cfg) => Some(motion_channels(&frames, cfg)?),
        MotionSource::Cache(root) => Some(cached_motion(root, &row.video_id, n, size)?),
    };
    samples_from_frames(&frames, motion.as_ref(), row.fall, &row.video_id, stride_for_fps(row.fps), hop)
}

pub fn samples_from_frames(
    frames: &Tensor<f32>,
    motion: Option<&Tensor<f32>>,
    label: bool,
    video_id: &str,
    stride: usize,
    hop: usize,
) -> Result<Vec<WindowSample>> {
    let wf = window_sampler(frames, stride, WINDOW, hop)?;
    let wm = motion.map(|m| window_sampler(m, stride, WINDOW, hop)).transpose()?;
    Ok(wf
        .windows
        .into_iter()
        .enumerate()
        .map(|(i, (start, f))| WindowSample {
            frames: f,
            motion: wm.as_ref().map(|m| m.windows[i].1.clone()),
            label,
            video_id: video_id.to_string(),
            start_frame: start,
        })
        .collect())
}

/// Windows of every video in `split`, in manifest order.
pub fn manifest_samples(
    manifest: &Manifest,
    split: Split,
    size: (usize, usize),
    motion: &MotionSource,
    hop: usize,
) -> Result<Vec<WindowSample>> {
    let rows: Vec<&ManifestRow> = manifest.split(split).collect();
    let per_video = crate::par::map_range(rows.len(), |i| {
        video_samples(rows[i], size, motion, hop).map_err(|e| Error::Manifest(format!("video {}: {e}", rows[i].video_id)))
    });
    let mut out = Vec::new();
    for v in per_video {
        out.extend(v?);
    }
    Ok(out)
}

/// Windows of in-memory synthetic clips in `split`.
pub fn clip_samples(clips: &[SynthClip], split: Split, motion: &MotionSource, hop: usize) -> Result<Vec<WindowSample>> {
    let chosen: Vec<&SynthClip> = clips.iter().filter(|c| c.split == split).collect();
    let per_clip = crate::par::map_range(chosen.len(), |i| {
        let c = chosen[i];
        let m = match motion {
            MotionSource::None => None,
            MotionSource::Compute(cfg) => Some(motion_channels(&c.frames, cfg)?),
            MotionSource::Cache(_) => {
                return Err(Error::InvalidArgument("in-memory clips have no flow cache".into()))
            }
        };
        samples_from_frames(&c.frames, m.as_ref(), c.is_fall(), &c.video_id, 1, hop)
    });
    let mut out = Vec::new();
    for v in per_clip {
        out.extend(v?);
    }
    Ok(out)
}

pub fn to_examples(samples: &[WindowSample]) -> Result<Vec<Example>> {
    samples.iter().map(WindowSample::to_example).collect()
}
