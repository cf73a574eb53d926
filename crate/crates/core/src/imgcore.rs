//! Grayscale frames, integral images, real-valued grids and flow-driven
//! warping.
//!
//! Everything downstream (cascade evaluation, optical flow, likelihood
//! maps) is built on the four types defined here.

use crate::error::{Error, Result};

/// An 8-bit grayscale frame stored row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frame")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidFrame(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "{width}x{height} frame needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// A frame with every pixel set to `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds a frame by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Converts interleaved 8-bit RGB to gray with the integer luma
    /// approximation `(299 r + 587 g + 114 b + 500) / 1000`.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::InvalidFrame(format!(
                "{width}x{height} RGB frame needs {} bytes, got {}",
                width * height * 3,
                rgb.len()
            )));
        }
        let data = rgb.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// The frame as a real-valued grid, one `f32` per pixel.
    pub fn to_grid(&self) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Summed-area table of a [`Frame`].
///
/// `sum(x, y)` is the sum of all intensities in `[0, x) x [0, y)`, so the
/// table is one row and one column larger than the frame and its first row
/// and column are zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    data: Vec<u64>,
}

impl IntegralImage {
    /// Width of the source frame; the table has `width + 1` columns.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row stride of [`IntegralImage::data`].
    pub fn stride(&self) -> usize {
        self.width + 1
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    #[inline]
    pub fn sum(&self, x: usize, y: usize) -> u64 {
        self.data[y * (self.width + 1) + x]
    }

    /// Sum of the pixels in `[x1, x2) x [y1, y2)`.
    #[inline]
    pub fn rect_sum(&self, x1: usize, y1: usize, x2: usize, y2: usize) -> u64 {
        (self.sum(x2, y2) + self.sum(x1, y1)) - (self.sum(x1, y2) + self.sum(x2, y1))
    }
}

pub fn integral(frame: &Frame) -> IntegralImage {
    let (w, h) = frame.dims();
    let stride = w + 1;
    let mut data = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        let src = &frame.data[y * w..(y + 1) * w];
        for (x, &v) in src.iter().enumerate() {
            row += v as u64;
            data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
        }
    }
    IntegralImage {
        width: w,
        height: h,
        data,
    }
}

/// A real-valued, row-major grid of `f32`.
///
/// Used for likelihood maps, flow components and intermediate float images.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "{width}x{height} grid needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Value at `(x, y)`, or zero outside the grid.
    #[inline]
    pub fn get_or_zero(&self, x: isize, y: isize) -> f32 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            0.0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }
}

/// Per-pixel displacement field.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    /// The same displacement at every pixel.
    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Self {
        Self {
            width,
            height,
            dx: vec![dx; width * height],
            dy: vec![dy; width * height],
        }
    }

    pub fn new(width: usize, height: usize, dx: Vec<f32>, dy: Vec<f32>) -> Result<Self> {
        if dx.len() != width * height || dy.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "{width}x{height} flow needs {} values per component",
                width * height
            )));
        }
        if dx.iter().chain(dy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("flow contains non-finite values".into()));
        }
        Ok(Self { width, height, dx, dy })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn dx(&self) -> &[f32] {
        &self.dx
    }

    pub fn dy(&self) -> &[f32] {
        &self.dy
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub(crate) fn from_parts_unchecked(width: usize, height: usize, dx: Vec<f32>, dy: Vec<f32>) -> Self {
        debug_assert_eq!(dx.len(), width * height);
        debug_assert_eq!(dy.len(), width * height);
        Self { width, height, dx, dy }
    }
}

/// Bilinear interpolation with a constant-zero border.
///
/// Integer in-bounds coordinates return the stored value exactly. Lattice
/// points outside the grid contribute zero, so evidence fades out over the
/// last pixel instead of being replicated.
#[inline]
pub fn bilinear_sample(grid: &Grid, x: f32, y: f32) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as isize, y0 as isize);
    let w = grid.width as isize;
    let h = grid.height as isize;
    if xi < -1 || yi < -1 || xi >= w || yi >= h {
        return 0.0;
    }
    let v00 = grid.get_or_zero(xi, yi);
    let v10 = grid.get_or_zero(xi + 1, yi);
    let v01 = grid.get_or_zero(xi, yi + 1);
    let v11 = grid.get_or_zero(xi + 1, yi + 1);
    let top = v00 * (1.0 - fx) + v10 * fx;
    let bottom = v01 * (1.0 - fx) + v11 * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Backward warp: `out(p) = bilinear_sample(map, p + flow(p))`.
///
/// The flow is expected to point from the current frame into the frame the
/// map belongs to.
pub fn warp_by_flow(map: &Grid, flow: &FlowField) -> Result<Grid> {
    if map.dims() != flow.dims() {
        return Err(Error::DimensionMismatch {
            expected: map.dims(),
            found: flow.dims(),
        });
    }
    let (w, h) = map.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out.push(bilinear_sample(map, x as f32 + flow.dx[i], y as f32 + flow.dy[i]));
        }
    }
    Ok(Grid {
        width: w,
        height: h,
        data: out,
    })
}
