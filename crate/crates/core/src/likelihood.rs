//! Stage-count likelihood maps.
//!
//! Instead of keeping only the windows that pass the whole cascade, every
//! window that passes at least `tau` stages votes for the pixels it covers
//! with its stage count. Windows are shrunk about their center first so
//! that the background at the window borders does not collect votes. The
//! map of the previous frame, moved along the optical flow, is blended with
//! the fresh map and faces are read off by thresholding.

use std::io::Write;

use crate::detector::DetectionWindow;
use crate::error::{Error, Result};
use crate::imgcore::{warp_by_flow, FlowField, Grid};
use crate::io::write_pgm;

/// Pixels a connected component needs before it is reported as a face.
pub const MIN_COMPONENT_AREA: usize = 9;

/// A non-negative, finite per-pixel accumulation of stage counts.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodMap {
    grid: Grid,
}

impl LikelihoodMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            grid: Grid::zeros(width, height),
        }
    }

    pub fn from_grid(grid: Grid) -> Result<Self> {
        if let Some(v) = grid.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "likelihood values must be finite and >= 0, found {v}"
            )));
        }
        Ok(Self { grid })
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn values(&self) -> &[f32] {
        self.grid.data()
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.grid.get(x, y)
    }

    pub fn max(&self) -> f32 {
        self.grid.max()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }

    /// Moves the map along `flow`: `out(p) = self(p + flow(p))`.
    ///
    /// Samples that fall outside the map read zero, so the result stays
    /// non-negative.
    pub fn warp(&self, flow: &FlowField) -> Result<Self> {
        Ok(Self {
            grid: warp_by_flow(&self.grid, flow)?,
        })
    }

    /// 8-bit PGM with `[0, max]` stretched to `[0, 255]`.
    pub fn write_pgm(&self, out: impl Write) -> std::io::Result<()> {
        let max = self.max();
        let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
        let pixels: Vec<u8> = self
            .values()
            .iter()
            .map(|v| (v * scale).round().min(255.0) as u8)
            .collect();
        write_pgm(out, self.width(), self.height(), &pixels)
    }
}

/// A face read off a likelihood map.
///
/// The center is the component centroid in continuous coordinates (pixel
/// `(x, y)` covers `[x, x+1) × [y, y+1)`). The box is the component's
/// bounding box stretched by `1/shrink` about that centroid and clipped to
/// the frame, so near a border it need not be centered on it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceBox {
    pub center_x: f64,
    pub center_y: f64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    /// Largest map value inside the component.
    pub peak: f32,
}

fn check_shrink(shrink: f64) -> Result<()> {
    if shrink > 0.0 && shrink <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "shrink must be in (0, 1], got {shrink}"
        )))
    }
}

/// Span of a side of length `len` at `start` shrunk about its middle.
fn shrink_span(start: u32, len: u32, shrink: f64) -> (usize, usize) {
    let s = ((len as f64 * shrink).round() as u32).clamp(1, len);
    let a = start + (len - s) / 2;
    (a as usize, (a + s) as usize)
}

/// Votes of all windows that passed at least `tau` stages.
///
/// Each vote adds the window's stage count to every pixel of the window
/// shrunk to `shrink` of its size about its center. Counts are summed as
/// integers, so the result does not depend on window order.
pub fn build_refresh_map(
    windows: &[DetectionWindow],
    width: usize,
    height: usize,
    tau: u32,
    shrink: f64,
) -> Result<LikelihoodMap> {
    check_shrink(shrink)?;
    let mut acc = vec![0u32; width * height];
    for w in windows.iter().filter(|w| w.stages_passed >= tau) {
        if w.x as usize + w.width as usize > width || w.y as usize + w.height as usize > height {
            return Err(Error::WindowOutOfBounds {
                x: w.x,
                y: w.y,
                scale: w.scale,
                width,
                height,
            });
        }
        let (x0, x1) = shrink_span(w.x, w.width, shrink);
        let (y0, y1) = shrink_span(w.y, w.height, shrink);
        for row in acc[y0 * width..y1 * width].chunks_exact_mut(width) {
            row[x0..x1].iter_mut().for_each(|v| *v += w.stages_passed);
        }
    }
    let grid = Grid::from_vec(width, height, acc.into_iter().map(|v| v as f32).collect())?;
    Ok(LikelihoodMap { grid })
}

/// Recursive filter `(1 - alpha) · refresh + alpha · warped_prev`.
pub fn blend(refresh: &LikelihoodMap, warped_prev: &LikelihoodMap, alpha: f32) -> Result<LikelihoodMap> {
    if refresh.dims() != warped_prev.dims() {
        return Err(Error::DimensionMismatch {
            expected: refresh.dims(),
            found: warped_prev.dims(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let values = refresh
        .values()
        .iter()
        .zip(warped_prev.values())
        .map(|(l, p)| (1.0 - alpha) * l + alpha * p)
        .collect();
    let grid = Grid::from_vec(refresh.width(), refresh.height(), values)?;
    Ok(LikelihoodMap { grid })
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let p = parent[i as usize];
        parent[i as usize] = parent[p as usize];
        i = p;
    }
    i
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // keep the smaller label as root so roots follow raster order
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// 8-connected labels of `mask`, numbered from 1 in raster order of each
/// component's first pixel; 0 is background.
pub fn label_components(mask: &[bool], width: usize, height: usize) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; width * height];
    let mut parent = vec![0u32];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            let mut neighbors = [0u32; 4];
            if x > 0 {
                neighbors[0] = labels[i - 1];
            }
            if y > 0 {
                let up = i - width;
                neighbors[1] = labels[up];
                if x > 0 {
                    neighbors[2] = labels[up - 1];
                }
                if x + 1 < width {
                    neighbors[3] = labels[up + 1];
                }
            }
            let mut own = 0;
            for &n in neighbors.iter().filter(|&&n| n != 0) {
                if own == 0 {
                    own = n;
                } else {
                    union(&mut parent, own, n);
                }
            }
            if own == 0 {
                own = parent.len() as u32;
                parent.push(own);
            }
            labels[i] = own;
        }
    }
    let mut compact = vec![0u32; parent.len()];
    let mut count = 0;
    for l in 1..parent.len() as u32 {
        let r = find(&mut parent, l);
        if r == l {
            count += 1;
            compact[l as usize] = count as u32;
        } else {
            compact[l as usize] = compact[r as usize];
        }
    }
    labels.iter_mut().for_each(|l| *l = compact[*l as usize]);
    (labels, count)
}

#[derive(Clone, Copy)]
struct Component {
    area: usize,
    sum_x: f64,
    sum_y: f64,
    min_x: usize,
    min_y: usize,
    max_x: usize,
    max_y: usize,
    peak: f32,
}

/// Faces from the pixels at or above `c`, strongest first.
pub fn extract_faces(map: &LikelihoodMap, c: f32, shrink: f64) -> Result<Vec<FaceBox>> {
    check_shrink(shrink)?;
    if c.is_nan() || c <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "threshold c must be positive, got {c}"
        )));
    }
    let (w, h) = map.dims();
    let mask: Vec<bool> = map.values().iter().map(|&v| v >= c).collect();
    let (labels, count) = label_components(&mask, w, h);
    let mut comps = vec![
        Component {
            area: 0,
            sum_x: 0.0,
            sum_y: 0.0,
            min_x: usize::MAX,
            min_y: usize::MAX,
            max_x: 0,
            max_y: 0,
            peak: 0.0,
        };
        count
    ];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let k = &mut comps[l as usize - 1];
        k.area += 1;
        k.sum_x += x as f64;
        k.sum_y += y as f64;
        k.min_x = k.min_x.min(x);
        k.min_y = k.min_y.min(y);
        k.max_x = k.max_x.max(x);
        k.max_y = k.max_y.max(y);
        k.peak = k.peak.max(map.values()[i]);
    }
    let mut faces: Vec<FaceBox> = comps
        .iter()
        .filter(|k| k.area >= MIN_COMPONENT_AREA)
        .map(|k| {
            let cx = k.sum_x / k.area as f64 + 0.5;
            let cy = k.sum_y / k.area as f64 + 0.5;
            let half_w = (k.max_x + 1 - k.min_x) as f64 / shrink / 2.0;
            let half_h = (k.max_y + 1 - k.min_y) as f64 / shrink / 2.0;
            let left = (cx - half_w).max(0.0);
            let top = (cy - half_h).max(0.0);
            let right = (cx + half_w).min(w as f64);
            let bottom = (cy + half_h).min(h as f64);
            FaceBox {
                center_x: cx,
                center_y: cy,
                left,
                top,
                width: right - left,
                height: bottom - top,
                peak: k.peak,
            }
        })
        .collect();
    faces.sort_by(|a, b| b.peak.total_cmp(&a.peak));
    Ok(faces)
}
