//! Synthetic thermal clips: a warm body rendered as a Gaussian blob over a
//! cool background.
//!
//! Falls translate, then within 4–6 frames spread into a dimmer horizontal
//! ellipse (total heat preserved) and lie still. Non-falls walk, sit (a
//! partial lowering without elongation), or show an empty room. Static warm
//! objects appear in every category so overall brightness does not give the
//! label away.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::frames::stack_planes;
use super::manifest::{Manifest, ManifestRow, Split};
use crate::error::{Error, Result};
use crate::imaging::Plane;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_fall: usize,
    pub n_nonfall: usize,
    pub extent: usize,
    pub frames: usize,
    pub noise: f64,
    pub fps: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_fall: usize, n_nonfall: usize, extent: usize, seed: u64) -> Self {
        Self {
            n_fall,
            n_nonfall,
            extent,
            frames: 10,
            noise: 0.01,
            fps: 4.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.extent < 16 {
            return Err(Error::InvalidArgument(format!("synthetic extent {} below 16", self.extent)));
        }
        if self.frames < 8 {
            return Err(Error::InvalidArgument("synthetic clips need at least 8 frames".into()));
        }
        if self.n_fall == 0 || self.n_nonfall == 0 {
            return Err(Error::InvalidArgument("synthetic dataset needs both classes".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipKind {
    Fall,
    Walk,
    Sit,
    Empty,
}

impl ClipKind {
    pub fn name(self) -> &'static str {
        match self {
            ClipKind::Fall => "fall",
            ClipKind::Walk => "walk",
            ClipKind::Sit => "sit",
            ClipKind::Empty => "empty",
        }
    }
}

/// Body parameters in one frame: centre, per-axis spread, peak heat above
/// background.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub sx: f64,
    pub sy: f64,
    pub peak: f64,
}

impl Blob {
    pub fn aspect(&self) -> f64 {
        self.sx / self.sy
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        let dx = (x - self.cx) / self.sx;
        let dy = (y - self.cy) / self.sy;
        self.peak * (-0.5 * (dx * dx + dy * dy)).exp()
    }
}

#[derive(Clone, Debug)]
pub struct SynthClip {
    pub video_id: String,
    pub kind: ClipKind,
    pub split: Split,
    pub tags: Vec<String>,
    /// `(T, E, E, 1)`, quantized to 8-bit levels.
    pub frames: Tensor<f32>,
    /// Body per frame (`None` for empty rooms).
    pub body: Vec<Option<Blob>>,
    /// `(onset, settle)`: last upright frame and first settled frame of a
    /// fall or sit.
    pub transition: Option<(usize, usize)>,
    pub background: f64,
}

impl SynthClip {
    pub fn is_fall(&self) -> bool {
        self.kind == ClipKind::Fall
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Walking path: constant velocity reflected at the borders.
fn walk(start: (f64, f64), vel: (f64, f64), steps: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let (mut x, mut y) = start;
    let (mut vx, mut vy) = vel;
    let mut path = Vec::with_capacity(steps);
    for _ in 0..steps {
        path.push((x, y));
        x += vx;
        y += vy;
        if x < lo || x > hi {
            vx = -vx;
            x = x.clamp(lo, hi);
        }
        if y < lo || y > hi {
            vy = -vy;
            y = y.clamp(lo, hi);
        }
    }
    path
}

type Rendered = (Vec<Plane>, Vec<Option<Blob>>, Option<(usize, usize)>, f64);

fn render_clip(cfg: &SynthConfig, kind: ClipKind, rng: &mut ChaCha8Rng) -> Rendered {
    let e = cfg.extent as f64;
    let t_len = cfg.frames;
    let unit = e / 32.0;
    let background = rng.random_range(0.08..0.18);
    let objects: Vec<Blob> = (0..rng.random_range(0..=2))
        .map(|_| {
            let s = rng.random_range(0.04..0.08) * e;
            Blob {
                cx: rng.random_range(0.1..0.9) * e,
                cy: rng.random_range(0.1..0.9) * e,
                sx: s,
                sy: s,
                peak: rng.random_range(0.1..0.45),
            }
        })
        .collect();

    let sigma = rng.random_range(0.07..0.09) * e;
    let peak = rng.random_range(0.6..0.8);
    let speed = rng.random_range(0.6..1.4) * unit;
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let vel = (speed * angle.cos(), speed * angle.sin());
    let start = (rng.random_range(0.3..0.7) * e, rng.random_range(0.3..0.6) * e);
    let path = walk(start, vel, t_len, 0.2 * e, 0.8 * e);

    let mut settle = None;
    let body: Vec<Option<Blob>> = match kind {
        ClipKind::Empty => vec![None; t_len],
        ClipKind::Walk => path
            .iter()
            .enumerate()
            .map(|(t, &(cx, cy))| {
                let breathe = 1.0 + 0.04 * (t as f64 * 1.3).sin();
                Some(Blob {
                    cx,
                    cy,
                    sx: sigma * breathe,
                    sy: sigma / breathe,
                    peak,
                })
            })
            .collect(),
        ClipKind::Fall | ClipKind::Sit => {
            let onset = rng.random_range(0..=(t_len - 8).min(2));
            let duration = rng.random_range(4..=6usize).min(t_len - 2 - onset);
            settle = Some((onset, onset + duration));
            let (grow_x, shrink_y, drop, dim) = if kind == ClipKind::Fall {
                (rng.random_range(2.0..2.6), 0.8, rng.random_range(1.0..2.0) * sigma, 1.0)
            } else {
                (rng.random_range(1.1..1.3), rng.random_range(0.9..1.0), rng.random_range(0.4..0.8) * sigma, 0.9)
            };
            let (ox, oy) = path[onset];
            let drift = (vel.0 * 0.5, vel.1 * 0.5);
            (0..t_len)
                .map(|t| {
                    if t <= onset {
                        let (cx, cy) = path[t];
                        return Some(Blob {
                            cx,
                            cy,
                            sx: sigma,
                            sy: sigma,
                            peak,
                        });
                    }
                    let k = ((t - onset) as f64).min(duration as f64);
                    let p = smoothstep(k / duration as f64);
                    let sx = sigma * (1.0 + (grow_x - 1.0) * p);
                    let sy = sigma * (1.0 + (shrink_y - 1.0) * p);
                    // Heat is conserved while spreading; sitting also cools slightly.
                    let mass = peak * sigma * sigma * (1.0 + (dim - 1.0) * p);
                    Some(Blob {
                        cx: (ox + drift.0 * k).clamp(0.15 * e, 0.85 * e),
                        cy: (oy + drift.1 * k + drop * p).clamp(0.15 * e, 0.85 * e),
                        sx,
                        sy,
                        peak: mass / (sx * sy),
                    })
                })
                .collect()
        }
    };

    let noise = Normal::new(0.0, cfg.noise).expect("noise sigma");
    let planes = body
        .iter()
        .map(|b| {
            Plane::from_fn(cfg.extent, cfg.extent, |y, x| {
                let (fy, fx) = (y as f64, x as f64);
                let mut v = background;
                v += objects.iter().map(|o| o.at(fy, fx)).sum::<f64>();
                if let Some(b) = b {
                    v += b.at(fy, fx);
                }
                v
            })
        })
        .map(|mut p| {
            for v in p.data.iter_mut() {
                let noisy = (*v + noise.sample(rng)).clamp(0.0, 1.0);
                *v = (noisy * 255.0).round() / 255.0;
            }
            p
        })
        .collect();
    (planes, body, settle, background)
}

/// Render the whole dataset in memory. Clip `i` draws from its own ChaCha
/// stream, so clips are independent of generation order.
pub fn synth_clips(cfg: &SynthConfig) -> Result<Vec<SynthClip>> {
    cfg.validate()?;
    let total = cfg.n_fall + cfg.n_nonfall;
    let clips: Vec<Result<SynthClip>> = crate::par::map_range(total, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let (kind, class_index) = if i < cfg.n_fall {
            (ClipKind::Fall, i)
        } else {
            let j = i - cfg.n_fall;
            ([ClipKind::Walk, ClipKind::Sit, ClipKind::Empty][j % 3], j)
        };
        // Every fifth clip of each class goes to validation: an 80:20 split
        // by video.
        let split = if class_index % 5 == 4 { Split::Val } else { Split::Train };
        let height = ["height_8ft", "height_9ft", "height_10ft"][rng.random_range(0..3)];
        let mut tags = vec![height.to_string()];
        if rng.random_bool(0.2) {
            tags.push("hospital".into());
        }
        if rng.random_bool(0.3) {
            tags.push("senior".into());
        }
        let (planes, body, transition, background) = render_clip(cfg, kind, &mut rng);
        Ok(SynthClip {
            video_id: format!("{}_{:04}", kind.name(), i + 1),
            kind,
            split,
            tags,
            frames: stack_planes(&planes)?,
            body,
            transition,
            background,
        })
    });
    clips.into_iter().collect()
}

/// Write clips as 8-bit PGM frame directories plus `manifest.csv` under
/// `out`, and return the manifest.
pub fn write_synth_dataset(cfg: &SynthConfig, out: &Path) -> Result<Manifest> {
    let clips = synth_clips(cfg)?;
    let videos = out.join("videos");
    let mut rows = Vec::with_capacity(clips.len());
    for clip in &clips {
        let dir = videos.join(&clip.video_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let e = cfg.extent;
        for t in 0..cfg.frames {
            let pixels: Vec<u8> = clip.frames.data()[t * e * e..(t + 1) * e * e]
                .iter()
                .map(|&v| (v as f64 * 255.0).round() as u8)
                .collect();
            let img = image::GrayImage::from_raw(e as u32, e as u32, pixels).expect("frame buffer size");
            let path = dir.join(format!("{:05}.pgm", t + 1));
            img.save(&path).map_err(|err| Error::Frame {
                path: path.clone(),
                reason: err.to_string(),
            })?;
        }
        rows.push(ManifestRow {
            video_id: clip.video_id.clone(),
            dir,
            fall: clip.is_fall(),
            split: clip.split,
            fps: cfg.fps,
            tags: clip.tags.iter().cloned().collect(),
        });
    }
    let manifest = Manifest::new(rows)?;
    let path = out.join("manifest.csv");
    std::fs::write(&path, manifest.to_csv(out)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::new(3, 3, 32, 11);
        let a = synth_clips(&cfg).unwrap();
        let b = synth_clips(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.frames, y.frames);
            assert_eq!(x.video_id, y.video_id);
        }
        let c = synth_clips(&SynthConfig::new(3, 3, 32, 12)).unwrap();
        assert_ne!(a[0].frames, c[0].frames);
    }

    #[test]
    fn falls_end_elongated_and_dimmer() {
        let clips = synth_clips(&SynthConfig::new(20, 3, 32, 5)).unwrap();
        for c in clips.iter().filter(|c| c.is_fall()) {
            let first = c.body[0].unwrap();
            let (onset, settle) = c.transition.unwrap();
            assert!((4..=6).contains(&(settle - onset)), "{}: {onset}..{settle}", c.video_id);
            assert!(settle + 2 <= c.body.len());
            for t in settle..c.body.len() {
                let b = c.body[t].unwrap();
                assert!(b.aspect() >= 2.0, "{}: aspect {}", c.video_id, b.aspect());
                assert!(b.peak <= 0.7 * first.peak, "{}: peak {} vs {}", c.video_id, b.peak, first.peak);
                assert_eq!(b, c.body[settle].unwrap(), "static after settling");
            }
        }
    }

    #[test]
    fn splits_and_values() {
        let clips = synth_clips(&SynthConfig::new(10, 10, 16, 1)).unwrap();
        assert_eq!(clips.iter().filter(|c| c.split == Split::Val).count(), 4);
        for c in &clips {
            assert_eq!(c.frames.shape(), &[10, 16, 16, 1]);
            assert!(c.frames.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(synth_clips(&SynthConfig::new(1, 1, 8, 0)).is_err());
    }

    #[test]
    fn written_dataset_reads_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::new(2, 2, 16, 4);
        let manifest = write_synth_dataset(&cfg, dir.path()).unwrap();
        let loaded = super::super::load_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded, manifest);
        let clips = synth_clips(&cfg).unwrap();
        for (row, clip) in loaded.rows.iter().zip(&clips) {
            let frames = super::super::load_frames(&row.dir, (16, 16)).unwrap();
            assert_eq!(frames, clip.frames, "{}", row.video_id);
        }
    }
}
