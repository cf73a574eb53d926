//! The per-frame tracking loop.
//!
//! The detector runs on refresh frames only: frame 0, every `n` frames after
//! the last successful refresh, and on every frame after a refresh that found
//! no face. In between, the previous likelihood map is carried along the
//! optical flow. On refresh frames the fresh map is blended with the carried
//! one.

use std::time::Instant;

use crate::cascade::CascadeModel;
use crate::detector::{CascadeDetector, ScanConfig, WindowDetector};
use crate::error::{Error, Result};
use crate::flow::{Farneback, FlowEstimator, FlowParams};
use crate::imgcore::Frame;
use crate::likelihood::{blend, build_refresh_map, extract_faces, FaceBox, LikelihoodMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerConfig {
    /// Frames between scheduled refreshes.
    pub n: u32,
    /// Weight of the propagated map when blending.
    pub alpha: f32,
    /// Minimum stages a window must pass to vote.
    pub tau: u32,
    pub shrink: f64,
    /// Binarization threshold for face extraction.
    pub c: f32,
    pub scan: ScanConfig,
    pub flow: FlowParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            n: 20,
            alpha: 0.5,
            tau: 15,
            shrink: 1.0 / 3.0,
            c: 65.0,
            scan: ScanConfig::default(),
            flow: FlowParams::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return bad(format!("shrink must be in (0, 1], got {}", self.shrink));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("c must be positive, got {}", self.c));
        }
        self.flow.validate()
    }
}

/// Wall-clock split of one step, in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub flow_ms: f64,
    pub detect_ms: f64,
    pub other_ms: f64,
}

impl Timings {
    pub fn total_ms(&self) -> f64 {
        self.flow_ms + self.detect_ms + self.other_ms
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub faces: Vec<FaceBox>,
    /// Whether the detector ran on this frame.
    pub refreshed: bool,
    pub timings: Timings,
}

#[derive(Clone, Debug, Default)]
pub struct TrackerState {
    pub frame_index: u64,
    /// Absent until the first successful refresh.
    pub map: Option<LikelihoodMap>,
    pub prev_frame: Option<Frame>,
    pub frames_since_refresh: u32,
    pub last_refresh_succeeded: bool,
}

/// A tracking session over frames of one fixed size.
pub struct Tracker<D, F> {
    detector: D,
    flow: F,
    cfg: TrackerConfig,
    state: TrackerState,
}

impl<'m> Tracker<CascadeDetector<'m>, Farneback> {
    /// Tracker driven by a cascade and Farnebäck flow, both configured from `cfg`.
    pub fn with_cascade(model: &'m CascadeModel, cfg: TrackerConfig) -> Result<Self> {
        Self::new(CascadeDetector::new(model, cfg.scan), Farneback::new(cfg.flow), cfg)
    }
}

impl<D: WindowDetector, F: FlowEstimator> Tracker<D, F> {
    pub fn new(detector: D, flow: F, cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            detector,
            flow,
            cfg,
            state: TrackerState::default(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    /// The current likelihood map, if any refresh has succeeded yet.
    pub fn map(&self) -> Option<&LikelihoodMap> {
        self.state.map.as_ref()
    }

    fn should_refresh(&self) -> bool {
        let s = &self.state;
        s.frame_index == 0 || s.frames_since_refresh >= self.cfg.n || !s.last_refresh_succeeded
    }

    pub fn step(&mut self, frame: &Frame) -> Result<FrameResult> {
        let start = Instant::now();
        if let Some(prev) = &self.state.prev_frame {
            if prev.dims() != frame.dims() {
                return Err(Error::DimensionMismatch {
                    expected: prev.dims(),
                    found: frame.dims(),
                });
            }
        }
        if self.state.frame_index > 0 {
            self.state.frames_since_refresh += 1;
        }
        let cfg = self.cfg;
        let mut timings = Timings::default();

        // carry the previous map into this frame
        let mut carried = None;
        if let (Some(prev), Some(map)) = (&self.state.prev_frame, &self.state.map) {
            let t = Instant::now();
            let flow = self.flow.estimate(frame, prev)?;
            timings.flow_ms = t.elapsed().as_secs_f64() * 1e3;
            carried = Some(map.warp(&flow)?);
        }

        let refreshed = self.should_refresh();
        let mut map = carried;
        if refreshed {
            let t = Instant::now();
            let windows = self.detector.detect(frame, cfg.tau)?;
            timings.detect_ms = t.elapsed().as_secs_f64() * 1e3;
            let fresh = build_refresh_map(&windows, frame.width(), frame.height(), cfg.tau, cfg.shrink)?;
            let found = !extract_faces(&fresh, cfg.c, cfg.shrink)?.is_empty();
            if found {
                map = Some(match &map {
                    Some(carried) => blend(&fresh, carried, cfg.alpha)?,
                    None => fresh,
                });
                self.state.frames_since_refresh = 0;
            }
            // after a miss the carried map is kept as is until a retry succeeds
            self.state.last_refresh_succeeded = found;
        }

        let faces = match &map {
            Some(m) => extract_faces(m, cfg.c, cfg.shrink)?,
            None => Vec::new(),
        };
        self.state.map = map;
        self.state.prev_frame = Some(frame.clone());
        self.state.frame_index += 1;

        let total = start.elapsed().as_secs_f64() * 1e3;
        timings.other_ms = (total - timings.flow_ms - timings.detect_ms).max(0.0);
        Ok(FrameResult {
            faces,
            refreshed,
            timings,
        })
    }
}

/// Runs a fresh session over `frames`, one result per frame.
pub fn run_sequence<D, F, I>(detector: D, flow: F, cfg: TrackerConfig, frames: I) -> Result<Vec<FrameResult>>
where
    D: WindowDetector,
    F: FlowEstimator,
    I: IntoIterator,
    I::Item: std::borrow::Borrow<Frame>,
{
    let mut tracker = Tracker::new(detector, flow, cfg)?;
    let results = frames
        .into_iter()
        .map(|f| tracker.step(std::borrow::Borrow::borrow(&f)))
        .collect::<Result<Vec<_>>>()?;
    if results.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(results)
}
