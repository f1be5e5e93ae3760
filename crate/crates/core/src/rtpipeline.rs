//! Streaming inference over a live or replayed frame source.
//!
//! An ingest thread decodes frames and queues them; the processing loop
//! resizes each frame, computes its flow against the predecessor (M1 only),
//! keeps the last [`WINDOW`] frames in a ring buffer and scores the window.
//! Late windows are never dropped: they are emitted with `over_budget` set,
//! and the queue depth seen at each dequeue is reported as backlog.

use std::collections::VecDeque;
use std::fmt;
use std::io::{ErrorKind, Read};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use crate::data::{decode_raw, list_frames, WINDOW};
use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, Plane};
use crate::metrics::{quantile_sorted, DEFAULT_THRESHOLD};
use crate::model::Model;
use crate::motionflow::FarnebackConfig;
use crate::tensor::Tensor;

/// Largest accepted length-prefixed frame payload.
pub const MAX_FRAME_BYTES: u32 = 64 << 20;

pub const EVENT_HEADER: &str = "window_index,score,is_fall,flow_ms,inference_ms,total_ms,over_budget";

#[derive(Clone, Debug)]
pub struct StreamConfig {
    pub fps: f64,
    pub hop: usize,
    pub budget_ms: f64,
    pub flow_enabled: bool,
    pub flow: FarnebackConfig,
    pub threshold: f64,
    /// Windows after a fall during which further falls count as the same
    /// incident.
    pub cooldown: usize,
    /// Test hook: sleep this long while processing the given window.
    pub inject_delay: Option<(usize, Duration)>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            fps: 4.0,
            hop: 1,
            budget_ms: 250.0,
            flow_enabled: false,
            flow: FarnebackConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            cooldown: 8,
            inject_delay: None,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget_ms > 0.0) {
            return Err(Error::InvalidArgument("budget_ms must be > 0".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::InvalidArgument("fps must be > 0".into()));
        }
        if self.hop == 0 {
            return Err(Error::InvalidArgument("hop must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument("threshold must lie in [0, 1]".into()));
        }
        self.flow.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyRecord {
    pub flow_ms: f64,
    pub inference_ms: f64,
    /// Dequeue of the window's newest frame to event emission.
    pub total_ms: f64,
    pub over_budget: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionEvent {
    /// 1-based index of the window's first frame.
    pub window: usize,
    pub score: f64,
    pub is_fall: bool,
    pub latency: LatencyRecord,
    /// Frames still queued when this window's newest frame was dequeued.
    pub backlog: usize,
}

impl DetectionEvent {
    /// One CSV record in [`EVENT_HEADER`] order.
    pub fn to_line(&self) -> String {
        let l = &self.latency;
        format!(
            "{},{:.6},{},{:.3},{:.3},{:.3},{}",
            self.window, self.score, self.is_fall, l.flow_ms, l.inference_ms, l.total_ms, l.over_budget
        )
    }
}

/// A source of raw frames in `[0, 1]`, in stream order.
pub trait FrameSource: Send {
    /// `None` once the source is exhausted.
    fn next_frame(&mut self) -> Option<Result<Plane>>;
}

/// Frames already in memory, yielded as fast as they are pulled.
pub struct MemorySource {
    frames: std::vec::IntoIter<Plane>,
}

impl MemorySource {
    pub fn new(frames: Vec<Plane>) -> Self {
        Self {
            frames: frames.into_iter(),
        }
    }
}

impl FrameSource for MemorySource {
    fn next_frame(&mut self) -> Option<Result<Plane>> {
        self.frames.next().map(Ok)
    }
}

/// Replays a frame directory, optionally paced to `fps`.
pub struct DirectorySource {
    paths: std::vec::IntoIter<PathBuf>,
    pace: Option<Duration>,
    started: Option<Instant>,
    sent: u32,
}

impl DirectorySource {
    pub fn open(dir: &Path, fps: Option<f64>) -> Result<Self> {
        let paths = list_frames(dir)?;
        let pace = match fps {
            Some(f) if f > 0.0 => Some(Duration::from_secs_f64(1.0 / f)),
            Some(_) => return Err(Error::InvalidArgument("replay fps must be > 0".into())),
            None => None,
        };
        Ok(Self {
            paths: paths.into_iter(),
            pace,
            started: None,
            sent: 0,
        })
    }
}

impl FrameSource for DirectorySource {
    fn next_frame(&mut self) -> Option<Result<Plane>> {
        let path = self.paths.next()?;
        if let Some(period) = self.pace {
            let start = *self.started.get_or_insert_with(Instant::now);
            let due = start + period * self.sent;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        self.sent += 1;
        Some(std::fs::read(&path).map_err(|e| Error::io(&path, e)).and_then(|b| decode_raw(&b, &path)))
    }
}

/// Length-prefixed frames: a little-endian `u32` byte count, then a PGM or
/// PNG payload.
pub struct LengthPrefixedSource<R> {
    reader: R,
    origin: PathBuf,
    done: bool,
}

impl<R: Read + Send> LengthPrefixedSource<R> {
    pub fn new(reader: R, origin: impl Into<PathBuf>) -> Self {
        Self {
            reader,
            origin: origin.into(),
            done: false,
        }
    }

    fn read_one(&mut self) -> Result<Option<Plane>> {
        let mut len = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match self.reader.read(&mut len[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(Error::Truncated("frame length prefix")),
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io(&self.origin, e)),
            }
        }
        let len = u32::from_le_bytes(len);
        if len == 0 || len > MAX_FRAME_BYTES {
            return Err(Error::Stream(format!("frame payload of {len} bytes is out of range")));
        }
        let mut payload = vec![0u8; len as usize];
        self.reader.read_exact(&mut payload).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Truncated("frame payload"),
            _ => Error::io(&self.origin, e),
        })?;
        decode_raw(&payload, &self.origin).map(Some)
    }
}

impl<R: Read + Send> FrameSource for LengthPrefixedSource<R> {
    fn next_frame(&mut self) -> Option<Result<Plane>> {
        if self.done {
            return None;
        }
        let r = self.read_one().transpose();
        if !matches!(r, Some(Ok(_))) {
            self.done = true;
        }
        r
    }
}

/// Encode a frame payload for [`LengthPrefixedSource`].
pub fn length_prefixed(payload: &[u8]) -> Vec<u8> {
    let mut out = (payload.len() as u32).to_le_bytes().to_vec();
    out.extend_from_slice(payload);
    out
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// `(1, T, H, W, C)` model input from the ring buffer.
fn window_input(ring: &VecDeque<(Plane, Option<Plane>)>, channels: usize) -> Result<Tensor<f32>> {
    let (h, w) = (ring[0].0.h, ring[0].0.w);
    let mut data = Vec::with_capacity(ring.len() * h * w * channels);
    for (frame, motion) in ring {
        for i in 0..h * w {
            data.push(frame.data[i] as f32);
            if let Some(m) = motion {
                data.push(m.data[i] as f32);
            }
        }
    }
    Tensor::new(&[1, ring.len(), h, w, channels], data)
}

/// Score every window of `source` in order, calling `on_event` as each one
/// is emitted. Ends cleanly when the source is exhausted; a change of frame
/// extents mid-stream is an error.
pub fn stream_process(
    source: Box<dyn FrameSource>,
    model: &Model<f32>,
    cfg: &StreamConfig,
    mut on_event: impl FnMut(&DetectionEvent) -> Result<()>,
) -> Result<Vec<DetectionEvent>> {
    cfg.validate()?;
    let spec = model.spec();
    if spec.frames != WINDOW {
        return Err(Error::InvalidArgument(format!(
            "streaming needs a {WINDOW}-frame model, got {}",
            spec.frames
        )));
    }
    if cfg.flow_enabled != spec.variant.uses_motion() {
        return Err(Error::InvalidArgument(format!(
            "{} expects {} motion channel; set flow_enabled accordingly",
            spec.variant,
            if spec.variant.uses_motion() { "a" } else { "no" }
        )));
    }
    let size = (spec.height, spec.width);
    let queued = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Result<Plane>>();

    std::thread::scope(|scope| {
        let queued = &queued;
        let mut source = source;
        scope.spawn(move || {
            while let Some(frame) = source.next_frame() {
                let failed = frame.is_err();
                queued.fetch_add(1, Ordering::SeqCst);
                if tx.send(frame).is_err() || failed {
                    break;
                }
            }
        });

        let mut ring: VecDeque<(Plane, Option<Plane>)> = VecDeque::with_capacity(WINDOW);
        let mut prev: Option<Plane> = None;
        let mut extents = None;
        let mut events = Vec::new();
        let mut frame_no = 0usize;
        let mut windows = 0usize;
        for frame in rx {
            let backlog = queued.fetch_sub(1, Ordering::SeqCst) - 1;
            let raw = frame?;
            let started = Instant::now();
            frame_no += 1;
            match extents {
                None => extents = Some((raw.h, raw.w)),
                Some(e) if e != (raw.h, raw.w) => {
                    return Err(Error::Stream(format!(
                        "frame {frame_no} is {}x{}, stream started at {}x{}",
                        raw.h, raw.w, e.0, e.1
                    )))
                }
                Some(_) => {}
            }
            let plane = resize_bilinear(&raw, size.0, size.1).round_to_f32();
            let mut flow_ms = 0.0;
            let motion = if cfg.flow_enabled {
                let t = Instant::now();
                let m = match &prev {
                    Some(p) => crate::data::motion_plane(p, &plane, &cfg.flow)?,
                    None => Plane::zeros(size.0, size.1),
                };
                flow_ms = ms(t.elapsed());
                Some(m)
            } else {
                None
            };
            if ring.len() == WINDOW {
                ring.pop_front();
            }
            ring.push_back((plane.clone(), motion));
            prev = Some(plane);
            if ring.len() < WINDOW {
                continue;
            }
            let window = frame_no + 1 - WINDOW;
            if !(window - 1).is_multiple_of(cfg.hop) {
                continue;
            }
            windows += 1;
            let x = window_input(&ring, spec.in_channels)?;
            let t = Instant::now();
            let score = model.predict(&x)?.data()[0] as f64;
            let inference_ms = ms(t.elapsed());
            if let Some((w, delay)) = cfg.inject_delay {
                if w == window {
                    std::thread::sleep(delay);
                }
            }
            let total_ms = ms(started.elapsed());
            let event = DetectionEvent {
                window,
                score,
                is_fall: score >= cfg.threshold,
                latency: LatencyRecord {
                    flow_ms,
                    inference_ms,
                    total_ms,
                    over_budget: total_ms > cfg.budget_ms,
                },
                backlog,
            };
            on_event(&event)?;
            events.push(event);
        }
        log::debug!("stream ended after {frame_no} frames, {windows} windows");
        Ok(events)
    })
}

/// Latency summary of a stream run.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetReport {
    pub events: usize,
    pub over_budget: usize,
    pub median_total_ms: f64,
    pub p95_total_ms: f64,
    pub max_total_ms: f64,
    pub max_backlog: usize,
}

impl fmt::Display for BudgetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} windows, {} over budget, total median {:.1} ms, p95 {:.1} ms, max {:.1} ms, max backlog {} frames",
            self.events, self.over_budget, self.median_total_ms, self.p95_total_ms, self.max_total_ms, self.max_backlog
        )
    }
}

pub fn budget_report(events: &[DetectionEvent]) -> Result<BudgetReport> {
    if events.is_empty() {
        return Err(Error::InvalidArgument("budget report needs at least one event".into()));
    }
    let mut totals: Vec<f64> = events.iter().map(|e| e.latency.total_ms).collect();
    totals.sort_by(f64::total_cmp);
    Ok(BudgetReport {
        events: events.len(),
        over_budget: events.iter().filter(|e| e.latency.over_budget).count(),
        median_total_ms: quantile_sorted(&totals, 0.5),
        p95_total_ms: quantile_sorted(&totals, 0.95),
        max_total_ms: *totals.last().unwrap(),
        max_backlog: events.iter().map(|e| e.backlog).max().unwrap_or(0),
    })
}

/// One reported fall incident.
#[derive(Clone, Debug, PartialEq)]
pub struct Alert {
    pub window: usize,
    pub score: f64,
}

/// Incremental form of [`debounce_alerts`] for live streams.
#[derive(Clone, Debug)]
pub struct Debouncer {
    cooldown: usize,
    last_fall: Option<usize>,
}

impl Debouncer {
    pub fn new(cooldown: usize) -> Self {
        Self {
            cooldown,
            last_fall: None,
        }
    }

    /// The alert raised by `event`, if it starts a new incident.
    pub fn push(&mut self, event: &DetectionEvent) -> Option<Alert> {
        if !event.is_fall {
            return None;
        }
        let fresh = self.last_fall.is_none_or(|last| event.window > last + self.cooldown);
        self.last_fall = Some(event.window);
        fresh.then_some(Alert {
            window: event.window,
            score: event.score,
        })
    }
}

/// Collapse runs of fall windows into incidents: a fall raises an alert
/// unless the previous fall window lies within `cooldown` windows of it.
pub fn debounce_alerts(events: &[DetectionEvent], cooldown: usize) -> Vec<Alert> {
    let mut d = Debouncer::new(cooldown);
    events.iter().filter_map(|e| d.push(e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(variant: Variant) -> Model<f32> {
        let spec = ModelSpec::desk(variant).with_size(16, 16);
        Model::build(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    fn frames(n: usize, h: usize, w: usize) -> Vec<Plane> {
        (0..n)
            .map(|t| Plane::from_fn(h, w, |y, x| (((y + x + 2 * t) % 17) as f64) / 17.0))
            .collect()
    }

    fn event(window: usize, is_fall: bool) -> DetectionEvent {
        DetectionEvent {
            window,
            score: if is_fall { 0.9 } else { 0.1 },
            is_fall,
            latency: LatencyRecord {
                flow_ms: 0.0,
                inference_ms: 0.0,
                total_ms: 0.0,
                over_budget: false,
            },
            backlog: 0,
        }
    }

    #[test]
    fn thirty_frames_give_twenty_one_ordered_windows() {
        let model = tiny(Variant::Baseline);
        let ev = stream_process(Box::new(MemorySource::new(frames(30, 20, 24))), &model, &StreamConfig::default(), |_| Ok(()))
            .unwrap();
        assert_eq!(ev.iter().map(|e| e.window).collect::<Vec<_>>(), (1..=21).collect::<Vec<_>>());
        for e in &ev {
            assert_eq!(e.latency.flow_ms, 0.0);
            assert_eq!(e.is_fall, e.score >= 0.5);
            assert!(e.score > 0.0 && e.score < 1.0);
            assert!(e.latency.total_ms >= e.latency.inference_ms - 0.5);
        }
    }

    #[test]
    fn short_streams_emit_nothing() {
        let model = tiny(Variant::Baseline);
        for n in [0, 1, 9] {
            let ev = stream_process(Box::new(MemorySource::new(frames(n, 16, 16))), &model, &StreamConfig::default(), |_| Ok(()))
                .unwrap();
            assert!(ev.is_empty());
        }
    }

    #[test]
    fn extent_change_is_an_error() {
        let model = tiny(Variant::Baseline);
        let mut f = frames(12, 16, 16);
        f[11] = Plane::zeros(16, 18);
        let err = stream_process(Box::new(MemorySource::new(f)), &model, &StreamConfig::default(), |_| Ok(())).unwrap_err();
        assert!(err.to_string().contains("frame 12"), "{err}");
    }

    #[test]
    fn motion_model_requires_flow() {
        let model = Model::build(&ModelSpec::desk(Variant::M1), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let src = || Box::new(MemorySource::new(frames(11, 32, 32)));
        assert!(stream_process(src(), &model, &StreamConfig::default(), |_| Ok(())).is_err());
        let cfg = StreamConfig {
            flow_enabled: true,
            ..StreamConfig::default()
        };
        let ev = stream_process(src(), &model, &cfg, |_| Ok(())).unwrap();
        assert_eq!(ev.len(), 2);
        assert!(ev.iter().all(|e| e.latency.flow_ms > 0.0));
    }

    #[test]
    fn replay_is_deterministic() {
        let model = tiny(Variant::M2);
        let run = || {
            stream_process(Box::new(MemorySource::new(frames(14, 16, 16))), &model, &StreamConfig::default(), |_| Ok(()))
                .unwrap()
                .iter()
                .map(|e| e.score)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn length_prefixed_round_trip() {
        let f = frames(3, 6, 5);
        let mut bytes = Vec::new();
        for p in &f {
            bytes.extend(length_prefixed(&crate::data::encode_pgm(p)));
        }
        let mut src = LengthPrefixedSource::new(std::io::Cursor::new(bytes.clone()), "<mem>");
        for p in &f {
            let got = src.next_frame().unwrap().unwrap();
            assert_eq!((got.h, got.w), (6, 5));
            assert!(got.data.iter().zip(&p.data).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
        }
        assert!(src.next_frame().is_none());

        bytes.truncate(bytes.len() - 3);
        let mut src = LengthPrefixedSource::new(std::io::Cursor::new(bytes), "<mem>");
        src.next_frame().unwrap().unwrap();
        src.next_frame().unwrap().unwrap();
        assert!(matches!(src.next_frame(), Some(Err(Error::Truncated(_)))));
        assert!(src.next_frame().is_none());
    }

    #[test]
    fn debounce_examples() {
        let ev: Vec<_> = (1..=25).map(|w| event(w, [5, 6, 7].contains(&w))).collect();
        assert_eq!(debounce_alerts(&ev, 8).iter().map(|a| a.window).collect::<Vec<_>>(), vec![5]);
        let ev: Vec<_> = (1..=25).map(|w| event(w, [5, 20].contains(&w))).collect();
        assert_eq!(debounce_alerts(&ev, 8).iter().map(|a| a.window).collect::<Vec<_>>(), vec![5, 20]);
        let ev: Vec<_> = (1..=25).map(|w| event(w, false)).collect();
        assert!(debounce_alerts(&ev, 8).is_empty());
    }

    #[test]
    fn budget_report_counts() {
        assert!(budget_report(&[]).is_err());
        let mut ev: Vec<_> = (1..=4).map(|w| event(w, false)).collect();
        assert_eq!(budget_report(&ev).unwrap().over_budget, 0);
        ev[2].latency.total_ms = 300.0;
        ev[2].latency.over_budget = true;
        ev[1].backlog = 3;
        let r = budget_report(&ev).unwrap();
        assert_eq!((r.over_budget, r.max_backlog, r.max_total_ms), (1, 3, 300.0));
    }
}
