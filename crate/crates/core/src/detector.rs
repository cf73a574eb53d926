//! Multi-scale sliding-window scanning.
//!
//! [`scan`] reports every lattice window that passed at least `min_stages`
//! stages together with its reject level; this is what the likelihood map is
//! built from. [`classic_detect`] is the textbook detector: full acceptances
//! only, merged by overlap grouping.
//!
//! The scan lattice is deterministic. Scale `k` is
//! `min_window / base_width * scale_factor^k`, the window size is the base
//! size times the scale (rounded), and positions advance by
//! `max(1, round(step_fraction * window_width))` pixels. Output is ordered by
//! scale, then row, then column.

use crate::cascade::{CascadeModel, ScaledCascade};
use crate::error::{Error, Result};
use crate::imgcore::{integral, Frame};

/// Rectangles whose sizes and corners differ by at most this fraction of the
/// smaller rectangle are neighbors during grouping.
pub const GROUP_EPS: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionWindow {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub scale: f64,
    pub stages_passed: u32,
}

impl DetectionWindow {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.width, self.height)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.width as f64 / 2.0,
            self.y as f64 + self.height as f64 / 2.0,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanConfig {
    pub scale_factor: f64,
    /// Smallest window width; defaults to the cascade's base width.
    pub min_window: Option<u32>,
    /// Largest window side; defaults to the frame's smaller dimension.
    pub max_window: Option<u32>,
    pub step_fraction: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            scale_factor: 1.1,
            min_window: None,
            max_window: None,
            step_fraction: 0.05,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self, model: &CascadeModel, width: usize, height: usize) -> Result<()> {
        if !(self.scale_factor.is_finite() && self.scale_factor > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "scale factor must exceed 1, got {}",
                self.scale_factor
            )));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step fraction must be in (0, 1], got {}",
                self.step_fraction
            )));
        }
        if let Some(min) = self.min_window {
            if min < model.base_width() {
                return Err(Error::InvalidParameter(format!(
                    "min window {min} is smaller than the base window {}",
                    model.base_width()
                )));
            }
        }
        if let Some(max) = self.max_window {
            if max as usize > width.min(height) {
                return Err(Error::InvalidParameter(format!(
                    "max window {max} exceeds the frame's smaller side {}",
                    width.min(height)
                )));
            }
        }
        Ok(())
    }
}

/// One scale of the scan lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanLevel {
    pub scale: f64,
    pub window: (u32, u32),
    pub step: u32,
}

/// The scales visited for a `width x height` frame, smallest first.
pub fn scan_levels(model: &CascadeModel, width: usize, height: usize, cfg: &ScanConfig) -> Result<Vec<ScanLevel>> {
    cfg.validate(model, width, height)?;
    let min = cfg.min_window.unwrap_or(model.base_width());
    let max = cfg.max_window.unwrap_or(width.min(height) as u32);
    let first = min as f64 / model.base_width() as f64;
    let mut levels = Vec::new();
    for k in 0.. {
        let scale = first * cfg.scale_factor.powi(k);
        let window = model.window_size(scale);
        if window.0 > max || window.1 > max {
            break;
        }
        let step = ((cfg.step_fraction * window.0 as f64).round() as u32).max(1);
        levels.push(ScanLevel { scale, window, step });
    }
    Ok(levels)
}

/// Every lattice window with at least `min_stages` stages passed.
pub fn scan(model: &CascadeModel, frame: &Frame, cfg: &ScanConfig, min_stages: u32) -> Result<Vec<DetectionWindow>> {
    if min_stages as usize > model.num_stages() {
        return Err(Error::InvalidParameter(format!(
            "min stages {min_stages} exceeds the cascade's {} stages",
            model.num_stages()
        )));
    }
    let (w, h) = frame.dims();
    let levels = scan_levels(model, w, h, cfg)?;
    let ii = integral(frame);
    let mut out = Vec::new();
    for level in levels {
        let scaled = ScaledCascade::new(model, level.scale, ii.stride());
        let (fw, fh) = scaled.footprint();
        if fw as usize > w || fh as usize > h {
            continue;
        }
        let step = level.step as usize;
        for y in (0..=h - fh as usize).step_by(step) {
            for x in (0..=w - fw as usize).step_by(step) {
                let passed = scaled.stages_passed(&ii, x as u32, y as u32) as u32;
                if passed >= min_stages {
                    out.push(DetectionWindow {
                        x: x as u32,
                        y: y as u32,
                        width: level.window.0,
                        height: level.window.1,
                        scale: level.scale,
                        stages_passed: passed,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Whether two rectangles belong to the same detection during grouping.
pub fn similar(a: &Rect, b: &Rect) -> bool {
    let mw = a.width.min(b.width) as f64 * GROUP_EPS;
    let mh = a.height.min(b.height) as f64 * GROUP_EPS;
    let d = |p: u32, q: u32| (p as f64 - q as f64).abs();
    d(a.width, b.width) <= mw && d(a.height, b.height) <= mh && d(a.x, b.x) <= mw && d(a.y, b.y) <= mh
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Merges rectangles into groups (transitive closure of [`similar`]) and
/// returns the rounded mean rectangle of every group with more than
/// `min_neighbors` members, sorted by position.
pub fn group_rectangles(rects: &[Rect], min_neighbors: usize) -> Vec<Rect> {
    let n = rects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if similar(&rects[i], &rects[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut sums = std::collections::BTreeMap::<usize, [u64; 5]>::new();
    for (i, r) in rects.iter().enumerate() {
        let root = find(&mut parent, i);
        let s = sums.entry(root).or_default();
        s[0] += r.x as u64;
        s[1] += r.y as u64;
        s[2] += r.width as u64;
        s[3] += r.height as u64;
        s[4] += 1;
    }
    let mut out: Vec<Rect> = sums
        .values()
        .filter(|s| s[4] as usize > min_neighbors)
        .map(|s| {
            let mean = |v: u64| (v as f64 / s[4] as f64).round() as u32;
            Rect::new(mean(s[0]), mean(s[1]), mean(s[2]), mean(s[3]))
        })
        .collect();
    out.sort_by_key(|r| (r.y, r.x, r.width, r.height));
    out
}

/// The classic per-frame detector: full acceptances grouped by overlap.
pub fn classic_detect(
    model: &CascadeModel,
    frame: &Frame,
    cfg: &ScanConfig,
    min_neighbors: usize,
) -> Result<Vec<Rect>> {
    let accepted: Vec<Rect> = scan(model, frame, cfg, model.num_stages() as u32)?
        .iter()
        .map(DetectionWindow::rect)
        .collect();
    Ok(group_rectangles(&accepted, min_neighbors))
}

/// Source of stage-count detection windows for the tracker.
pub trait WindowDetector {
    fn detect(&mut self, frame: &Frame, min_stages: u32) -> Result<Vec<DetectionWindow>>;
}

/// [`scan`] with a fixed model and configuration.
#[derive(Clone, Debug)]
pub struct CascadeDetector<'m> {
    pub model: &'m CascadeModel,
    pub scan: ScanConfig,
}

impl<'m> CascadeDetector<'m> {
    pub fn new(model: &'m CascadeModel, scan: ScanConfig) -> Self {
        Self { model, scan }
    }
}

impl WindowDetector for CascadeDetector<'_> {
    fn detect(&mut self, frame: &Frame, min_stages: u32) -> Result<Vec<DetectionWindow>> {
        scan(self.model, frame, &self.scan, min_stages)
    }
}
