//! Dense two-frame optical flow by polynomial expansion (Farnebäck).
//!
//! Every pixel neighborhood is approximated by a quadratic
//! `f(d) ≈ c + bᵀd + dᵀAd`, fitted by Gaussian-weighted least squares. If
//! the second image is the first shifted by `u`, then `A₂ = A₁` and
//! `b₂ = b₁ - 2A₁u`, so `u` follows from the change in the linear term.
//! Starting from a prior displacement `ũ` (coarser pyramid level or previous
//! iteration) each pixel contributes the constraint
//!
//! ```text
//! A u = Δb,   A = (A₁(p) + A₂(p + ũ)) / 2,   Δb = -(b₂(p + ũ) - b₁(p)) / 2 + A ũ
//! ```
//!
//! and the normal equations `Σ AᵀA u = Σ AᵀΔb` are averaged over a
//! `window_size` box before solving.
//!
//! The returned field maps `prev` into `next`: `prev(p) ≈ next(p + flow(p))`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::imgcore::{FlowField, Frame, Grid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    /// Size ratio between consecutive pyramid levels, in (0, 1).
    pub pyramid_scale: f64,
    /// Pyramid levels including full resolution; 1 means single scale.
    pub levels: usize,
    pub window_size: usize,
    pub iterations: usize,
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            pyramid_scale: 0.5,
            levels: 3,
            window_size: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return bad(format!("pyramid scale must be in (0, 1), got {}", self.pyramid_scale));
        }
        if self.levels < 1 || self.iterations < 1 {
            return bad("levels and iterations must be at least 1".into());
        }
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return bad(format!("window size must be odd and >= 3, got {}", self.window_size));
        }
        if self.poly_n != 5 && self.poly_n != 7 {
            return bad(format!("poly_n must be 5 or 7, got {}", self.poly_n));
        }
        if !(self.poly_sigma > 0.0 && self.poly_sigma.is_finite()) {
            return bad(format!("poly_sigma must be positive, got {}", self.poly_sigma));
        }
        Ok(())
    }
}

/// Per-pixel quadratic model coefficients.
///
/// `axy` is the off-diagonal entry of the symmetric matrix `A`, i.e. half of
/// the `xy` coefficient of the fitted polynomial.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Poly {
    pub bx: f32,
    pub by: f32,
    pub axx: f32,
    pub ayy: f32,
    pub axy: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyExpansion {
    width: usize,
    height: usize,
    coeffs: Vec<[f32; 5]>,
}

impl PolyExpansion {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> Poly {
        let [bx, by, axx, ayy, axy] = self.coeffs[y * self.width + x];
        Poly { bx, by, axx, ayy, axy }
    }
}

/// Normalized 1-D Gaussian taps for offsets `-n/2 ..= n/2`.
fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let half = (n / 2) as i64;
    let mut g: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Replicate-border padded copy of `src`.
fn pad_row(src: &[f32], half: usize, out: &mut Vec<f32>) {
    out.clear();
    let first = src[0];
    let last = *src.last().unwrap();
    out.extend(std::iter::repeat(first).take(half));
    out.extend_from_slice(src);
    out.extend(std::iter::repeat(last).take(half));
}

pub fn poly_expand(frame: &Frame, poly_n: usize, poly_sigma: f64) -> Result<PolyExpansion> {
    poly_expand_grid(&frame.to_grid(), poly_n, poly_sigma)
}

/// Polynomial expansion of a float image, edges replicated.
pub fn poly_expand_grid(img: &Grid, poly_n: usize, poly_sigma: f64) -> Result<PolyExpansion> {
    let (w, h) = img.dims();
    if poly_n % 2 == 0 || poly_n < 3 {
        return Err(Error::InvalidParameter(format!(
            "poly_n must be odd and >= 3, got {poly_n}"
        )));
    }
    if w < poly_n || h < poly_n {
        return Err(Error::InvalidFrame(format!(
            "{w}x{h} image is smaller than the {poly_n}x{poly_n} expansion neighborhood"
        )));
    }
    let half = poly_n / 2;
    let g64 = gaussian_taps(poly_n, poly_sigma);
    let (mut m2, mut m4) = (0.0f64, 0.0f64);
    for (k, &gk) in g64.iter().enumerate() {
        let i = k as f64 - half as f64;
        m2 += gk * i * i;
        m4 += gk * i * i * i * i;
    }
    // Gram matrix of (1, x², y²) under the separable weight; the odd and
    // cross terms decouple.
    let gram = [[1.0, m2, m2], [m2, m4, m2 * m2], [m2, m2 * m2, m4]];
    let inv = invert3(gram);
    let (ixx, iyy) = (inv[1], inv[2]);
    let ib = 1.0 / m2;
    let ixy = 1.0 / (2.0 * m2 * m2);

    let g: Vec<f32> = g64.iter().map(|&v| v as f32).collect();
    let gi: Vec<f32> = g64
        .iter()
        .enumerate()
        .map(|(k, &v)| (v * (k as f64 - half as f64)) as f32)
        .collect();
    let gii: Vec<f32> = g64
        .iter()
        .enumerate()
        .map(|(k, &v)| (v * (k as f64 - half as f64).powi(2)) as f32)
        .collect();

    // horizontal pass: s0 = Σ g f, s1 = Σ g i f, s2 = Σ g i² f
    let mut rows = vec![[0f32; 3]; w * h];
    let mut padded = Vec::with_capacity(w + 2 * half);
    for y in 0..h {
        pad_row(&img.data()[y * w..(y + 1) * w], half, &mut padded);
        let out = &mut rows[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let win = &padded[x..x + poly_n];
            let (mut s0, mut s1, mut s2) = (0f32, 0f32, 0f32);
            for k in 0..poly_n {
                s0 += g[k] * win[k];
                s1 += gi[k] * win[k];
                s2 += gii[k] * win[k];
            }
            *o = [s0, s1, s2];
        }
    }

    // vertical pass and per-pixel solve
    let mut coeffs = vec![[0f32; 5]; w * h];
    let mut acc = vec![[0f32; 6]; w];
    for y in 0..h {
        acc.iter_mut().for_each(|a| *a = [0.0; 6]);
        for k in 0..poly_n {
            let sy = (y as isize + k as isize - half as isize).clamp(0, h as isize - 1) as usize;
            let src = &rows[sy * w..(sy + 1) * w];
            let (gk, gik, giik) = (g[k], gi[k], gii[k]);
            for (a, s) in acc.iter_mut().zip(src) {
                a[0] += gk * s[0]; // 1
                a[1] += gk * s[1]; // x
                a[2] += gik * s[0]; // y
                a[3] += gk * s[2]; // x²
                a[4] += giik * s[0]; // y²
                a[5] += gik * s[1]; // xy
            }
        }
        let out = &mut coeffs[y * w..(y + 1) * w];
        for (o, a) in out.iter_mut().zip(&acc) {
            let (m1, mxx, myy) = (a[0] as f64, a[3] as f64, a[4] as f64);
            let axx = ixx[0] * m1 + ixx[1] * mxx + ixx[2] * myy;
            let ayy = iyy[0] * m1 + iyy[1] * mxx + iyy[2] * myy;
            *o = [
                (a[1] as f64 * ib) as f32,
                (a[2] as f64 * ib) as f32,
                axx as f32,
                ayy as f32,
                (a[5] as f64 * ixy) as f32,
            ];
        }
    }
    Ok(PolyExpansion {
        width: w,
        height: h,
        coeffs,
    })
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 1, 2, 2), -c(1, 0, 2, 2), c(1, 0, 2, 1)],
        [-c(0, 1, 2, 2), c(0, 0, 2, 2), -c(0, 0, 2, 1)],
        [c(0, 1, 1, 2), -c(0, 0, 1, 2), c(0, 0, 1, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            inv[r][col] = cof[col][r] / det;
        }
    }
    inv
}

/// Separable Gaussian blur with replicated edges.
fn gaussian_blur(img: &Grid, sigma: f64) -> Grid {
    let radius = (((sigma * 5.0).round() as usize) | 1).max(3) / 2;
    let taps: Vec<f32> = gaussian_taps(2 * radius + 1, sigma).iter().map(|&v| v as f32).collect();
    let (w, h) = img.dims();
    let mut tmp = vec![0f32; w * h];
    let mut padded = Vec::with_capacity(w + 2 * radius);
    for y in 0..h {
        pad_row(&img.data()[y * w..(y + 1) * w], radius, &mut padded);
        for x in 0..w {
            tmp[y * w + x] = taps.iter().zip(&padded[x..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let row = &mut out[y * w..(y + 1) * w];
        for (k, &t) in taps.iter().enumerate() {
            let sy = (y as isize + k as isize - radius as isize).clamp(0, h as isize - 1) as usize;
            for (o, v) in row.iter_mut().zip(&tmp[sy * w..(sy + 1) * w]) {
                *o += t * v;
            }
        }
    }
    Grid::from_vec(w, h, out).unwrap()
}

/// Bilinear resize with pixel-center alignment and replicated edges.
fn resize(img: &Grid, nw: usize, nh: usize) -> Grid {
    let (w, h) = img.dims();
    let sx = w as f32 / nw as f32;
    let sy = h as f32 / nh as f32;
    let src = |v: usize, s: f32, n: usize| {
        let p = ((v as f32 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f32);
        let i = (p.floor() as usize).min(n.saturating_sub(2));
        (i, (i + 1).min(n - 1), p - i as f32)
    };
    let cols: Vec<_> = (0..nw).map(|x| src(x, sx, w)).collect();
    Grid::from_fn(nw, nh, |x, y| {
        let (y0, y1, fy) = src(y, sy, h);
        let (x0, x1, fx) = cols[x];
        let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
        let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Smallest side a pyramid level may have.
const MIN_LEVEL_SIDE: usize = 16;

fn pyramid_sizes(w: usize, h: usize, params: &FlowParams) -> Vec<(usize, usize)> {
    let mut sizes = vec![(w, h)];
    for k in 1..params.levels {
        let s = params.pyramid_scale.powi(k as i32);
        let (lw, lh) = ((w as f64 * s).round() as usize, (h as f64 * s).round() as usize);
        if lw < MIN_LEVEL_SIDE.max(params.poly_n) || lh < MIN_LEVEL_SIDE.max(params.poly_n) {
            break;
        }
        sizes.push((lw, lh));
    }
    sizes
}

fn pyramid_level(img: &Grid, k: usize, size: (usize, usize), params: &FlowParams) -> Grid {
    if k == 0 {
        return img.clone();
    }
    let s = params.pyramid_scale.powi(k as i32);
    let sigma = (1.0 / s - 1.0) * 0.5;
    resize(&gaussian_blur(img, sigma), size.0, size.1)
}

const BORDER: usize = 5;
const BORDER_WEIGHTS: [f32; BORDER] = [0.14, 0.14, 0.4472, 0.4472, 0.4472];

fn border_weight(v: usize, n: usize) -> f32 {
    let mut s = 1.0;
    if v < BORDER {
        s *= BORDER_WEIGHTS[v];
    }
    if v + BORDER >= n {
        s *= BORDER_WEIGHTS[n - 1 - v];
    }
    s
}

/// Per-pixel normal-equation terms `[gxx, gxy, gyy, hx, hy]` of `AᵀA u = AᵀΔb`.
fn update_matrices(r0: &PolyExpansion, r1: &PolyExpansion, dx: &[f32], dy: &[f32]) -> Vec<[f32; 5]> {
    let (w, h) = (r0.width, r0.height);
    let mut m = vec![[0f32; 5]; w * h];
    for y in 0..h {
        let wy = border_weight(y, h);
        for x in 0..w {
            let i = y * w + x;
            let [b0x, b0y, a0xx, a0yy, a0xy] = r0.coeffs[i];
            let (ux, uy) = (dx[i], dy[i]);
            let fx = x as f32 + ux;
            let fy = y as f32 + uy;
            let (x1, y1) = (fx.floor(), fy.floor());
            let (mut axx, mut ayy, mut axy, mut dbx, mut dby);
            if x1 >= 0.0 && y1 >= 0.0 && (x1 as usize) < w - 1 && (y1 as usize) < h - 1 {
                let (xi, yi) = (x1 as usize, y1 as usize);
                let (tx, ty) = (fx - x1, fy - y1);
                let j = yi * w + xi;
                let (c00, c10, c01, c11) = (r1.coeffs[j], r1.coeffs[j + 1], r1.coeffs[j + w], r1.coeffs[j + w + 1]);
                let lerp = |k: usize| {
                    (c00[k] * (1.0 - tx) + c10[k] * tx) * (1.0 - ty) + (c01[k] * (1.0 - tx) + c11[k] * tx) * ty
                };
                axx = (a0xx + lerp(2)) * 0.5;
                ayy = (a0yy + lerp(3)) * 0.5;
                axy = (a0xy + lerp(4)) * 0.5;
                dbx = (b0x - lerp(0)) * 0.5;
                dby = (b0y - lerp(1)) * 0.5;
            } else {
                // no evidence outside the image: keep the prior
                axx = a0xx;
                ayy = a0yy;
                axy = a0xy;
                dbx = 0.0;
                dby = 0.0;
            }
            dbx += axx * ux + axy * uy;
            dby += axy * ux + ayy * uy;
            let s = wy * border_weight(x, w);
            if s != 1.0 {
                axx *= s;
                ayy *= s;
                axy *= s;
                dbx *= s;
                dby *= s;
            }
            m[i] = [
                axx * axx + axy * axy,
                axy * (axx + ayy),
                ayy * ayy + axy * axy,
                axx * dbx + axy * dby,
                axy * dbx + ayy * dby,
            ];
        }
    }
    m
}

/// Normalized box average with replicated edges, applied to each channel.
fn box_blur5(src: &[[f32; 5]], w: usize, h: usize, size: usize) -> Vec<[f32; 5]> {
    let half = size / 2;
    let norm = 1.0 / (size * size) as f32;
    // vertical running sums
    let mut vert = vec![[0f32; 5]; w * h];
    let mut col = vec![[0f32; 5]; w];
    let row = |y: isize| y.clamp(0, h as isize - 1) as usize * w;
    for k in -(half as isize)..=half as isize {
        let r = row(k);
        for x in 0..w {
            for c in 0..5 {
                col[x][c] += src[r + x][c];
            }
        }
    }
    for y in 0..h {
        vert[y * w..(y + 1) * w].copy_from_slice(&col);
        let add = row(y as isize + half as isize + 1);
        let sub = row(y as isize - half as isize);
        for x in 0..w {
            for c in 0..5 {
                col[x][c] += src[add + x][c] - src[sub + x][c];
            }
        }
    }
    // horizontal running sums
    let mut out = vec![[0f32; 5]; w * h];
    for y in 0..h {
        let line = &vert[y * w..(y + 1) * w];
        let at = |x: isize| line[x.clamp(0, w as isize - 1) as usize];
        let mut acc = [0f32; 5];
        for k in -(half as isize)..=half as isize {
            let v = at(k);
            for c in 0..5 {
                acc[c] += v[c];
            }
        }
        for x in 0..w {
            let o = &mut out[y * w + x];
            for c in 0..5 {
                o[c] = acc[c] * norm;
            }
            let (a, s) = (at(x as isize + half as isize + 1), at(x as isize - half as isize));
            for c in 0..5 {
                acc[c] += a[c] - s[c];
            }
        }
    }
    out
}

fn solve_flow(m: &[[f32; 5]], w: usize, h: usize, window: usize, dx: &mut [f32], dy: &mut [f32]) {
    let avg = box_blur5(m, w, h, window);
    for (i, [gxx, gxy, gyy, hx, hy]) in avg.into_iter().enumerate() {
        let idet = 1.0 / (gxx * gyy - gxy * gxy + 1e-3);
        dx[i] = (gyy * hx - gxy * hy) * idet;
        dy[i] = (gxx * hy - gxy * hx) * idet;
    }
}

/// Dense flow from `prev` to `next`, coarse to fine.
pub fn compute_flow(prev: &Frame, next: &Frame, params: &FlowParams) -> Result<FlowField> {
    if prev.dims() != next.dims() {
        return Err(Error::DimensionMismatch {
            expected: prev.dims(),
            found: next.dims(),
        });
    }
    params.validate()?;
    let (w, h) = prev.dims();
    if w < params.poly_n || h < params.poly_n {
        return Err(Error::InvalidFrame(format!(
            "{w}x{h} frame is smaller than the {0}x{0} expansion neighborhood",
            params.poly_n
        )));
    }
    let (g0, g1) = (prev.to_grid(), next.to_grid());
    let sizes = pyramid_sizes(w, h, params);

    let mut flow: Option<(usize, usize, Vec<f32>, Vec<f32>)> = None;
    for k in (0..sizes.len()).rev() {
        let (lw, lh) = sizes[k];
        let (mut dx, mut dy) = match flow.take() {
            None => (vec![0f32; lw * lh], vec![0f32; lw * lh]),
            Some((pw, ph, pdx, pdy)) => {
                let (rx, ry) = (lw as f32 / pw as f32, lh as f32 / ph as f32);
                let up = |v: Vec<f32>, r: f32| {
                    resize(&Grid::from_vec(pw, ph, v).unwrap(), lw, lh)
                        .into_vec()
                        .into_iter()
                        .map(|d| d * r)
                        .collect::<Vec<_>>()
                };
                (up(pdx, rx), up(pdy, ry))
            }
        };
        let r0 = poly_expand_grid(
            &pyramid_level(&g0, k, (lw, lh), params),
            params.poly_n,
            params.poly_sigma,
        )?;
        let r1 = poly_expand_grid(
            &pyramid_level(&g1, k, (lw, lh), params),
            params.poly_n,
            params.poly_sigma,
        )?;
        let mut m = update_matrices(&r0, &r1, &dx, &dy);
        for it in 0..params.iterations {
            solve_flow(&m, lw, lh, params.window_size, &mut dx, &mut dy);
            if it + 1 < params.iterations {
                m = update_matrices(&r0, &r1, &dx, &dy);
            }
        }
        flow = Some((lw, lh, dx, dy));
    }
    let (_, _, dx, dy) = flow.expect("at least one level");
    Ok(FlowField::from_parts_unchecked(w, h, dx, dy))
}

/// Source of dense flow fields for the tracker.
pub trait FlowEstimator {
    /// Flow from `from` to `to`: `from(p) ≈ to(p + flow(p))`.
    fn estimate(&mut self, from: &Frame, to: &Frame) -> Result<FlowField>;
}

#[derive(Clone, Debug, Default)]
pub struct Farneback {
    pub params: FlowParams,
}

impl Farneback {
    pub fn new(params: FlowParams) -> Self {
        Self { params }
    }
}

impl FlowEstimator for Farneback {
    fn estimate(&mut self, from: &Frame, to: &Frame) -> Result<FlowField> {
        compute_flow(from, to, &self.params)
    }
}

/// Always reports zero motion.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroFlow;

impl FlowEstimator for ZeroFlow {
    fn estimate(&mut self, from: &Frame, to: &Frame) -> Result<FlowField> {
        if from.dims() != to.dims() {
            return Err(Error::DimensionMismatch {
                expected: from.dims(),
                found: to.dims(),
            });
        }
        Ok(FlowField::zeros(from.width(), from.height()))
    }
}

const FLOW_MAGIC: &[u8; 4] = b"FLOW";

/// Writes the binary dump: `FLOW`, u32 width, u32 height, then row-major
/// `(dx, dy)` f32 pairs, all little-endian.
pub fn write_flow(mut out: impl Write, flow: &FlowField) -> std::io::Result<()> {
    out.write_all(FLOW_MAGIC)?;
    out.write_all(&(flow.width() as u32).to_le_bytes())?;
    out.write_all(&(flow.height() as u32).to_le_bytes())?;
    for (dx, dy) in flow.dx().iter().zip(flow.dy()) {
        out.write_all(&dx.to_le_bytes())?;
        out.write_all(&dy.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_flow(mut input: impl Read) -> std::io::Result<FlowField> {
    let invalid = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let mut head = [0u8; 12];
    input.read_exact(&mut head)?;
    if &head[..4] != FLOW_MAGIC {
        return Err(invalid("missing FLOW magic"));
    }
    let w = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut body = vec![0u8; w * h * 8];
    input.read_exact(&mut body)?;
    let mut dx = Vec::with_capacity(w * h);
    let mut dy = Vec::with_capacity(w * h);
    for pair in body.chunks_exact(8) {
        dx.push(f32::from_le_bytes(pair[..4].try_into().unwrap()));
        dy.push(f32::from_le_bytes(pair[4..].try_into().unwrap()));
    }
    FlowField::new(w, h, dx, dy).map_err(|e| invalid(&e.to_string()))
}
