//! Boosted MB-LBP cascades that report how many stages a window passed.
//!
//! A classic detector only cares whether a window survives every stage. The
//! tracker instead keeps the *reject level*: the number of consecutive
//! stages, starting at stage 0, whose summed leaf values reach the stage
//! threshold. A full acceptance is simply `stages_passed == num_stages`.
//!
//! Models come from two sources: the compact native text format
//! ([`parse_native`], [`serialize_native`]) and the XML schema written by the
//! common open-source cascade training tools ([`parse_standard_xml`]).

mod native;
mod xml;

use std::fmt;

pub use native::{parse_native, serialize_native};
pub use xml::parse_standard_xml;

use crate::error::Error;
use crate::imgcore::IntegralImage;

/// Where in the input a parse error was detected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Location {
    Byte(usize),
    Element(String),
    Unknown,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Byte(offset) => write!(f, "byte {offset}"),
            Location::Element(path) => write!(f, "element {path}"),
            Location::Unknown => f.write_str("unknown location"),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParseError {
    #[error("malformed header at byte {offset}: {message}")]
    MalformedHeader { offset: usize, message: String },

    #[error("truncated data at byte {offset} while reading stage {stage}")]
    Truncated { offset: usize, stage: usize },

    #[error("expected {expected} at byte {offset}, found {found:?}")]
    InvalidToken {
        offset: usize,
        expected: &'static str,
        found: String,
    },

    #[error("unexpected trailing data at byte {offset}")]
    TrailingData { offset: usize },

    #[error("stage {stage}, weak classifier {weak}: feature {feature:?} exceeds the base window ({at})")]
    FeatureOutOfWindow {
        stage: usize,
        weak: usize,
        feature: MbLbpFeature,
        at: Location,
    },

    #[error("stage {stage} has no weak classifiers ({at})")]
    EmptyStage { stage: usize, at: Location },

    #[error("cascade has no stages")]
    EmptyCascade,

    #[error("invalid base window {width}x{height}")]
    InvalidWindow { width: u32, height: u32 },

    #[error("{path}: {message}")]
    Xml { path: String, message: String },

    #[error("unsupported feature type {found:?}; only LBP cascades are supported")]
    UnsupportedFeature { found: String },
}

/// A multi-block LBP feature: the top-left block of a 3x3 grid of
/// `block_width x block_height` blocks, in base-window coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MbLbpFeature {
    pub x: u32,
    pub y: u32,
    pub block_width: u32,
    pub block_height: u32,
}

impl MbLbpFeature {
    pub fn new(x: u32, y: u32, block_width: u32, block_height: u32) -> Self {
        Self {
            x,
            y,
            block_width,
            block_height,
        }
    }

    /// Right and bottom edge of the 3x3 block grid.
    pub fn extent(&self) -> (u32, u32) {
        (self.x + 3 * self.block_width, self.y + 3 * self.block_height)
    }

    /// Feature rectangle for a window scaled by `scale`. Every coordinate is
    /// multiplied and rounded half away from zero; block sizes stay >= 1.
    pub fn scaled(&self, scale: f64) -> Self {
        let r = |v: u32| (v as f64 * scale).round() as u32;
        Self {
            x: r(self.x),
            y: r(self.y),
            block_width: r(self.block_width).max(1),
            block_height: r(self.block_height).max(1),
        }
    }

    fn fits(&self, width: u32, height: u32) -> bool {
        let (ex, ey) = self.extent();
        self.block_width >= 1 && self.block_height >= 1 && ex <= width && ey <= height
    }
}

/// 256-entry bit table over LBP codes. Bit `c` lives in word `c / 32` at bit
/// position `c % 32`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Lut([u32; 8]);

impl Lut {
    pub fn from_words(words: [u32; 8]) -> Self {
        Self(words)
    }

    pub fn from_codes(codes: impl IntoIterator<Item = u8>) -> Self {
        let mut lut = Self::default();
        for c in codes {
            lut.insert(c);
        }
        lut
    }

    pub fn words(&self) -> [u32; 8] {
        self.0
    }

    #[inline]
    pub fn contains(&self, code: u8) -> bool {
        self.0[(code >> 5) as usize] & (1 << (code & 31)) != 0
    }

    pub fn insert(&mut self, code: u8) {
        self.0[(code >> 5) as usize] |= 1 << (code & 31);
    }

    pub fn count(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }
}

impl fmt::Debug for Lut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Lut(")?;
        for w in self.0 {
            write!(f, "{w:08x}")?;
        }
        write!(f, ")")
    }
}

/// A decision stump on one MB-LBP code: `left` when the code is in the
/// LUT, `right` otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakClassifier {
    pub feature: MbLbpFeature,
    pub lut: Lut,
    pub left: f32,
    pub right: f32,
}

impl WeakClassifier {
    #[inline]
    pub fn response(&self, code: u8) -> f32 {
        if self.lut.contains(code) {
            self.left
        } else {
            self.right
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    weak: Vec<WeakClassifier>,
    threshold: f32,
}

impl Stage {
    pub fn new(weak: Vec<WeakClassifier>, threshold: f32) -> Option<Self> {
        (!weak.is_empty()).then_some(Self { weak, threshold })
    }

    pub fn weak(&self) -> &[WeakClassifier] {
        &self.weak
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }
}

/// An immutable staged classifier over a `base_width x base_height` window.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel {
    base_width: u32,
    base_height: u32,
    stages: Vec<Stage>,
}

impl CascadeModel {
    pub fn new(base_width: u32, base_height: u32, stages: Vec<Stage>) -> Result<Self, ParseError> {
        if base_width < 3 || base_height < 3 {
            return Err(ParseError::InvalidWindow {
                width: base_width,
                height: base_height,
            });
        }
        if stages.is_empty() {
            return Err(ParseError::EmptyCascade);
        }
        for (si, stage) in stages.iter().enumerate() {
            for (wi, weak) in stage.weak.iter().enumerate() {
                if !weak.feature.fits(base_width, base_height) {
                    return Err(ParseError::FeatureOutOfWindow {
                        stage: si,
                        weak: wi,
                        feature: weak.feature,
                        at: Location::Unknown,
                    });
                }
            }
        }
        Ok(Self {
            base_width,
            base_height,
            stages,
        })
    }

    pub fn base_width(&self) -> u32 {
        self.base_width
    }

    pub fn base_height(&self) -> u32 {
        self.base_height
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Window size in pixels at `scale`.
    pub fn window_size(&self, scale: f64) -> (u32, u32) {
        (
            ((self.base_width as f64 * scale).round() as u32).max(1),
            ((self.base_height as f64 * scale).round() as u32).max(1),
        )
    }

    /// Pixels a window at `scale` actually touches: the window itself or the
    /// furthest scaled feature grid, whichever is larger. Rounding can push
    /// a scaled grid one or two pixels past the rounded window.
    pub fn footprint(&self, scale: f64) -> (u32, u32) {
        let (mut w, mut h) = self.window_size(scale);
        for weak in self.stages.iter().flat_map(|s| s.weak.iter()) {
            let (ex, ey) = weak.feature.scaled(scale).extent();
            w = w.max(ex);
            h = h.max(ey);
        }
        (w, h)
    }
}

/// 8-bit MB-LBP code of an (already scaled) feature placed at
/// `(offset_x, offset_y)`.
///
/// Bits 7..0 compare the top-left, top-center, top-right, middle-right,
/// bottom-right, bottom-center, bottom-left and middle-left blocks against the
/// center block; a bit is set when the neighbor sum is `>=` the center sum.
pub fn lbp_code(ii: &IntegralImage, feature: &MbLbpFeature, offset_x: u32, offset_y: u32) -> u8 {
    let off = corner_offsets(feature, ii.stride());
    let base = offset_y as usize * ii.stride() + offset_x as usize;
    code_at(ii.data(), base, &off)
}

#[inline]
fn corner_offsets(f: &MbLbpFeature, stride: usize) -> [usize; 16] {
    let mut off = [0usize; 16];
    for r in 0..4 {
        for c in 0..4 {
            let x = (f.x + c as u32 * f.block_width) as usize;
            let y = (f.y + r as u32 * f.block_height) as usize;
            off[r * 4 + c] = y * stride + x;
        }
    }
    off
}

#[inline(always)]
fn code_at(data: &[u64], base: usize, off: &[usize; 16]) -> u8 {
    let p = |i: usize| data[base + off[i]];
    // block (r, c) spans corners r*4+c .. r*4+c+5
    let block = |i: usize| (p(i) + p(i + 5)) - (p(i + 1) + p(i + 4));
    let center = block(5);
    ((block(0) >= center) as u8) << 7
        | ((block(1) >= center) as u8) << 6
        | ((block(2) >= center) as u8) << 5
        | ((block(6) >= center) as u8) << 4
        | ((block(10) >= center) as u8) << 3
        | ((block(9) >= center) as u8) << 2
        | ((block(8) >= center) as u8) << 1
        | (block(4) >= center) as u8
}

/// A cascade with every feature pre-scaled and pre-resolved to integral-image
/// offsets for one scale and one integral-image stride.
#[derive(Clone, Debug)]
pub struct ScaledCascade<'m> {
    model: &'m CascadeModel,
    scale: f64,
    stride: usize,
    window: (u32, u32),
    footprint: (u32, u32),
    offsets: Vec<[usize; 16]>,
}

impl<'m> ScaledCascade<'m> {
    pub fn new(model: &'m CascadeModel, scale: f64, stride: usize) -> Self {
        let offsets = model
            .stages
            .iter()
            .flat_map(|s| s.weak.iter())
            .map(|w| corner_offsets(&w.feature.scaled(scale), stride))
            .collect();
        Self {
            model,
            scale,
            stride,
            window: model.window_size(scale),
            footprint: model.footprint(scale),
            offsets,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn window_size(&self) -> (u32, u32) {
        self.window
    }

    pub fn footprint(&self) -> (u32, u32) {
        self.footprint
    }

    /// Whether a window with top-left `(x, y)` can be evaluated on `ii`.
    pub fn fits(&self, ii: &IntegralImage, x: u32, y: u32) -> bool {
        ii.stride() == self.stride
            && x as usize + self.footprint.0 as usize <= ii.width()
            && y as usize + self.footprint.1 as usize <= ii.height()
    }

    /// Number of consecutive stages passed, stopping at the first failure.
    ///
    /// The caller guarantees [`ScaledCascade::fits`].
    #[inline]
    pub fn stages_passed(&self, ii: &IntegralImage, x: u32, y: u32) -> usize {
        debug_assert!(self.fits(ii, x, y));
        let data = ii.data();
        let base = y as usize * self.stride + x as usize;
        let mut k = 0;
        for (si, stage) in self.model.stages.iter().enumerate() {
            let mut sum = 0f32;
            for weak in &stage.weak {
                sum += weak.response(code_at(data, base, &self.offsets[k]));
                k += 1;
            }
            if sum < stage.threshold {
                return si;
            }
        }
        self.model.stages.len()
    }
}

/// Reject level of the window at `(x, y)` and `scale`: how many stages it
/// passes before the first failure. Equal to `model.num_stages()` exactly
/// when the window is a full acceptance.
pub fn evaluate_window(model: &CascadeModel, ii: &IntegralImage, x: u32, y: u32, scale: f64) -> Result<usize, Error> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
    }
    let scaled = ScaledCascade::new(model, scale, ii.stride());
    if !scaled.fits(ii, x, y) {
        return Err(Error::WindowOutOfBounds {
            x,
            y,
            scale,
            width: ii.width(),
            height: ii.height(),
        });
    }
    Ok(scaled.stages_passed(ii, x, y))
}
