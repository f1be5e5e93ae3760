use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, Plane};
use crate::motionflow::{farneback_planes, FarnebackConfig, DEFAULT_MAX_FLOW_PX};
use crate::tensor::Tensor;

const FRAME_EXTENSIONS: [&str; 3] = ["pgm", "png", "pnm"];

/// Trailing digits of the file stem: `frame_0012.pgm` → 12.
fn frame_index(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(char::is_ascii_digit).collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

/// Frame files of `dir` in index order. Files without a numeric index or
/// sharing an index are errors.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| FRAME_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let idx = frame_index(&path).ok_or_else(|| Error::Frame {
            path: path.clone(),
            reason: "file name carries no frame index".into(),
        })?;
        frames.push((idx, path));
    }
    frames.sort();
    for pair in frames.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::Frame {
                path: pair[1].1.clone(),
                reason: format!("frame index {} repeats {}", pair[1].0, pair[0].1.display()),
            });
        }
    }
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

/// Decode an 8-bit grayscale PGM/PNG at its native extents, in `[0, 1]`.
pub fn decode_raw(bytes: &[u8], origin: &Path) -> Result<Plane> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Frame {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok(Plane::new(h, w, gray.as_raw().iter().map(|&v| v as f64 / 255.0).collect()))
}

/// Decode a frame and resample it to `(h, w)`.
pub fn decode_frame(bytes: &[u8], size: (usize, usize), origin: &Path) -> Result<Plane> {
    Ok(resize_bilinear(&decode_raw(bytes, origin)?, size.0, size.1))
}

/// Binary PGM (`P5`) bytes of a `[0, 1]` plane.
pub fn encode_pgm(plane: &Plane) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", plane.w, plane.h).into_bytes();
    out.extend(plane.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Read and resize one frame, rounded to `f32` like stacked frames.
pub fn read_frame(path: &Path, size: (usize, usize)) -> Result<Plane> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_frame(&bytes, size, path)?.round_to_f32())
}

/// Stack planes into `(N, H, W, 1)`.
pub fn stack_planes(planes: &[Plane]) -> Result<Tensor<f32>> {
    let first = planes
        .first()
        .ok_or_else(|| Error::InvalidArgument("no frames to stack".into()))?;
    let mut data = Vec::with_capacity(planes.len() * first.data.len());
    for p in planes {
        if (p.h, p.w) != (first.h, first.w) {
            return Err(Error::shape("stack_planes", &[p.h, p.w], &[first.h, first.w]));
        }
        data.extend(p.data.iter().map(|&v| v as f32));
    }
    Tensor::new(&[planes.len(), first.h, first.w, 1], data)
}

/// Frame `n` of an `(N, H, W, 1)` stack.
pub fn frame_plane(frames: &Tensor<f32>, n: usize) -> Plane {
    let [_, h, w, _] = frames.shape().try_into().expect("(N, H, W, 1) frames");
    let per = h * w;
    Plane::new(h, w, frames.data()[n * per..(n + 1) * per].iter().map(|&v| v as f64).collect())
}

/// All frames of `dir`, resized to `size`, as `(N, H, W, 1)` in `[0, 1]`.
pub fn load_frames(dir: &Path, size: (usize, usize)) -> Result<Tensor<f32>> {
    let paths = list_frames(dir)?;
    if paths.is_empty() {
        return Err(Error::Frame {
            path: dir.to_path_buf(),
            reason: "directory holds no PGM/PNG frames".into(),
        });
    }
    let planes: Vec<Plane> = crate::par::map_range(paths.len(), |i| read_frame(&paths[i], size))
        .into_iter()
        .collect::<Result<_>>()?;
    stack_planes(&planes)
}

/// Motion channel per frame: flow magnitude from the previous frame,
/// clipped and scaled to `[0, 1]`; frame 0 has no predecessor and gets 0.
pub fn motion_channels(frames: &Tensor<f32>, cfg: &FarnebackConfig) -> Result<Tensor<f32>> {
    let n = frames.shape()[0];
    let maps: Vec<Result<Plane>> = crate::par::map_range(n, |i| {
        let cur = frame_plane(frames, i);
        if i == 0 {
            return Ok(Plane::zeros(cur.h, cur.w));
        }
        motion_plane(&frame_plane(frames, i - 1), &cur, cfg)
    });
    let maps: Vec<Plane> = maps.into_iter().collect::<Result<_>>()?;
    stack_planes(&maps)
}

/// Clipped flow magnitude between two frames, in `[0, 1]`.
pub fn motion_plane(prev: &Plane, next: &Plane, cfg: &FarnebackConfig) -> Result<Plane> {
    let (u, v) = farneback_planes(prev, next, cfg)?;
    Ok(Plane::new(
        u.h,
        u.w,
        u.data
            .iter()
            .zip(&v.data)
            .map(|(a, b)| (a.hypot(*b)).min(DEFAULT_MAX_FLOW_PX) / DEFAULT_MAX_FLOW_PX)
            .collect(),
    ))
}

/// Sliding windows over a frame stack.
#[derive(Clone, Debug)]
pub struct Windows {
    /// `(start frame, 1-based in the original numbering; window (T, H, W, 1))`.
    pub windows: Vec<(usize, Tensor<f32>)>,
    /// Set when too few frames survive striding to fill one window.
    pub insufficient: bool,
}

/// Keep every `stride`-th frame, then cut `window`-frame windows every
/// `hop` retained frames.
pub fn window_sampler(frames: &Tensor<f32>, stride: usize, window: usize, hop: usize) -> Result<Windows> {
    if stride == 0 || window == 0 || hop == 0 {
        return Err(Error::InvalidArgument("stride, window and hop must be positive".into()));
    }
    let s = frames.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "expected (N, H, W, C) frames".into(),
        });
    }
    let per: usize = s[1..].iter().product();
    let kept: Vec<usize> = (0..s[0]).step_by(stride).collect();
    if kept.len() < window {
        log::warn!("{} retained frames cannot fill a {window}-frame window", kept.len());
        return Ok(Windows {
            windows: Vec::new(),
            insufficient: true,
        });
    }
    let mut windows = Vec::new();
    let mut start = 0;
    while start + window <= kept.len() {
        let mut data = Vec::with_capacity(window * per);
        for &f in &kept[start..start + window] {
            data.extend_from_slice(&frames.data()[f * per..(f + 1) * per]);
        }
        let mut shape = vec![window];
        shape.extend_from_slice(&s[1..]);
        windows.push((kept[start] + 1, Tensor::new(&shape, data)?));
        start += hop;
    }
    Ok(Windows {
        windows,
        insufficient: false,
    })
}

/// Frame stride that brings `fps` down to the 4 fps the models expect.
pub fn stride_for_fps(fps: f64) -> usize {
    ((fps / 4.0).round() as usize).max(1)
}
