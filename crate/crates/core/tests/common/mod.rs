//! Fixtures shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::ops::Range;

use facetrack::cascade::{lbp_code, CascadeModel, Lut, MbLbpFeature, Stage, WeakClassifier};
use facetrack::detector::{scan_levels, DetectionWindow, ScanConfig, WindowDetector};
use facetrack::eval::GroundTruthRecord;
use facetrack::flow::FlowEstimator;
use facetrack::imgcore::{integral, FlowField, Frame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth random texture: a sum of random plane waves with wavelengths
/// between 6 and 40 pixels, defined on the whole plane.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    pub fn random(rng: &mut impl Rng) -> Self {
        let waves = (0..24)
            .map(|_| {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / rng.gen_range(6.0..40.0);
                (
                    k * theta.cos(),
                    k * theta.sin(),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.3..1.0),
                )
            })
            .collect();
        Self { waves }
    }

    /// Intensity in roughly [0, 255].
    pub fn at(&self, x: f64, y: f64) -> f64 {
        let norm: f64 = self.waves.iter().map(|w| w.3).sum();
        let s: f64 = self
            .waves
            .iter()
            .map(|&(kx, ky, ph, a)| a * (kx * x + ky * y + ph).sin())
            .sum();
        127.5 + 127.5 * (s / norm * 2.2).tanh()
    }

    /// Frame whose pixel `(x, y)` shows texture point `(x + ox, y + oy)`.
    pub fn frame(&self, w: usize, h: usize, ox: f64, oy: f64) -> Frame {
        Frame::from_fn(w, h, |x, y| {
            self.at(x as f64 + ox, y as f64 + oy).round().clamp(0.0, 255.0) as u8
        })
        .unwrap()
    }
}

pub fn median(mut v: Vec<f32>) -> f32 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * 0.5
    }
}

// ---------------------------------------------------------------------------
// Synthetic face scene

/// A cartoon face moving over a textured background.
#[derive(Clone, Debug)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub face_size: f64,
    /// Face center at frame 0.
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    /// Frames on which a different patch covers the face and moves with it.
    pub occlusion: Option<Range<usize>>,
    /// Amplitude of the per-frame uniform noise.
    pub noise: f64,
    pub seed: u64,
    background: Texture,
    skin: Texture,
    occluder: Texture,
}

impl Scene {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        Self {
            width,
            height,
            face_size: 48.0,
            start: (width as f64 / 2.0, height as f64 / 2.0),
            velocity: (0.0, 0.0),
            occlusion: None,
            noise: 3.0,
            seed,
            background: Texture::random(&mut r),
            skin: Texture::random(&mut r),
            occluder: Texture::random(&mut r),
        }
    }

    pub fn face_center(&self, t: usize) -> (f64, f64) {
        (
            self.start.0 + self.velocity.0 * t as f64,
            self.start.1 + self.velocity.1 * t as f64,
        )
    }

    pub fn occluded(&self, t: usize) -> bool {
        self.occlusion.as_ref().is_some_and(|r| r.contains(&t))
    }

    /// Face intensity at normalized face coordinates `(u, v)` in [-0.5, 0.5],
    /// or `None` outside the head.
    fn face(&self, u: f64, v: f64, sx: f64, sy: f64) -> Option<f64> {
        if (u / 0.46).powi(2) + (v / 0.5).powi(2) > 1.0 {
            return None;
        }
        let disk = |cx: f64, cy: f64, r: f64| (u - cx).powi(2) + (v - cy).powi(2) < r * r;
        let mut g = 170.0 + 0.12 * (self.skin.at(sx, sy) - 127.5);
        // shading towards the outline
        g -= 40.0 * ((u / 0.46).powi(2) + (v / 0.5).powi(2));
        if disk(-0.17, -0.1, 0.075) || disk(0.17, -0.1, 0.075) {
            g = 40.0;
        } else if (v + 0.22).abs() < 0.025 && ((u + 0.17).abs() < 0.11 || (u - 0.17).abs() < 0.11) {
            g = 70.0; // brows
        } else if (v - 0.24).abs() < 0.035 && u.abs() < 0.16 {
            g = 80.0; // mouth
        } else if u.abs() < 0.035 && v > -0.02 && v < 0.12 {
            g -= 35.0; // nose
        }
        Some(g)
    }

    pub fn render(&self, t: usize) -> Frame {
        self.render_with_noise(t, self.seed.wrapping_mul(1000).wrapping_add(t as u64))
    }

    pub fn render_with_noise(&self, t: usize, noise_seed: u64) -> Frame {
        let mut r = rng(noise_seed);
        let (cx, cy) = self.face_center(t);
        let s = self.face_size;
        let occluded = self.occluded(t);
        Frame::from_fn(self.width, self.height, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (u, v) = ((px - cx) / s, (py - cy) / s);
            // texture coordinates ride along with the face
            let (sx, sy) = (px - cx, py - cy);
            let base = if occluded && u.abs() <= 0.55 && v.abs() <= 0.55 {
                self.occluder.at(sx + 500.0, sy + 500.0)
            } else {
                self.face(u, v, sx, sy).unwrap_or_else(|| self.background.at(px, py))
            };
            let n = if self.noise > 0.0 {
                r.gen_range(-self.noise..=self.noise)
            } else {
                0.0
            };
            (base + n).round().clamp(0.0, 255.0) as u8
        })
        .unwrap()
    }

    /// Eye annotations whose derived center (with the default 10 px offset)
    /// is the face center.
    pub fn ground_truth(&self, frames: usize) -> Vec<GroundTruthRecord> {
        (0..frames)
            .map(|t| {
                let (cx, cy) = self.face_center(t);
                GroundTruthRecord {
                    frame_index: t as u64,
                    left_eye: (cx - 12.0, cy - 10.0),
                    right_eye: (cx + 12.0, cy - 10.0),
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Cascade authoring

/// Lattice windows of `frame` with their scaled-feature origin data.
pub fn lattice(model_base: u32, width: usize, height: usize, max_extent: u32) -> Vec<(u32, u32, f64, u32)> {
    // a throwaway single-stage model gives the scan geometry
    let weak = WeakClassifier {
        feature: MbLbpFeature::new(0, 0, max_extent / 3, max_extent / 3),
        lut: Lut::default(),
        left: 1.0,
        right: 1.0,
    };
    let model = CascadeModel::new(model_base, model_base, vec![Stage::new(vec![weak], 0.0).unwrap()]).unwrap();
    let mut out = Vec::new();
    for level in scan_levels(&model, width, height, &ScanConfig::default()).unwrap() {
        let (fw, fh) = model.footprint(level.scale);
        if fw as usize > width || fh as usize > height {
            continue;
        }
        for y in (0..=height - fh as usize).step_by(level.step as usize) {
            for x in (0..=width - fw as usize).step_by(level.step as usize) {
                out.push((x as u32, y as u32, level.scale, level.window.0));
            }
        }
    }
    out
}

/// Authors a cascade of `stages` single-feature stages that fires on the
/// scene's face: each stage takes, from a pool of random features, the one
/// whose set of LBP codes seen on face windows admits the fewest remaining
/// background windows.
pub fn author_cascade(scene: &Scene, stages: usize, seed: u64) -> CascadeModel {
    const BASE: u32 = 24;
    let mut r = rng(seed);
    let mut pos = Vec::new(); // (frame id, x, y, scale)
    let mut neg = Vec::new();
    let mut frames = Vec::new();
    let windows = lattice(BASE, scene.width, scene.height, BASE);
    for (k, t) in [0usize, 7, 13, 21, 38, 45, 52, 59].into_iter().enumerate() {
        if scene.occluded(t) {
            continue;
        }
        for rep in 0..3u64 {
            let frame = scene.render_with_noise(t, 7_000_000 + 31 * k as u64 + rep);
            let (cx, cy) = scene.face_center(t);
            let id = frames.len();
            for &(x, y, scale, w) in &windows {
                let (wx, wy) = (x as f64 + w as f64 / 2.0, y as f64 + w as f64 / 2.0);
                let ratio = w as f64 / scene.face_size;
                let off = (wx - cx).abs().max((wy - cy).abs()) / w as f64;
                if (0.85..=1.2).contains(&ratio) && off <= 0.1 {
                    pos.push((id, x, y, scale));
                } else if rep == 0 && (off > 0.5 || !(0.6..=1.6).contains(&ratio)) {
                    neg.push((id, x, y, scale));
                }
            }
            frames.push(integral(&frame));
        }
    }
    // occluder frames are background too
    if let Some(range) = scene.occlusion.clone() {
        let t = range.start + range.len() / 2;
        let id = frames.len();
        frames.push(integral(&scene.render_with_noise(t, 9_000_001)));
        neg.extend(windows.iter().map(|&(x, y, s, _)| (id, x, y, s)));
    }

    // windows the scaled feature would overrun are never scanned
    let (fw, fh) = (scene.width as u32, scene.height as u32);
    let code = |f: &MbLbpFeature, &(id, x, y, s): &(usize, u32, u32, f64)| {
        let g = f.scaled(s);
        let (ex, ey) = g.extent();
        (x + ex <= fw && y + ey <= fh).then(|| lbp_code(&frames[id], &g, x, y))
    };
    let mut out = Vec::with_capacity(stages);
    for _ in 0..stages {
        let mut best: Option<(usize, WeakClassifier)> = None;
        for _ in 0..40 {
            let bw = r.gen_range(2..=6u32);
            let bh = r.gen_range(2..=6u32);
            let f = MbLbpFeature::new(r.gen_range(0..=BASE - 3 * bw), r.gen_range(0..=BASE - 3 * bh), bw, bh);
            let lut = Lut::from_codes(pos.iter().filter_map(|p| code(&f, p)));
            let admitted = neg
                .iter()
                .filter(|n| code(&f, n).is_some_and(|c| lut.contains(c)))
                .count();
            if best.as_ref().map_or(true, |b| admitted < b.0) {
                best = Some((
                    admitted,
                    WeakClassifier {
                        feature: f,
                        lut,
                        left: 1.0,
                        right: -1.0,
                    },
                ));
            }
        }
        let (_, weak) = best.unwrap();
        neg.retain(|n| code(&weak.feature, n).is_some_and(|c| weak.lut.contains(c)));
        out.push(Stage::new(vec![weak], 0.0).unwrap());
    }
    CascadeModel::new(BASE, BASE, out).unwrap()
}

// ---------------------------------------------------------------------------
// Independent cascade oracle

/// Block sum by direct pixel iteration.
fn block_sum(frame: &Frame, x: u32, y: u32, w: u32, h: u32) -> u64 {
    let mut s = 0u64;
    for yy in y..y + h {
        for xx in x..x + w {
            s += frame.get(xx as usize, yy as usize) as u64;
        }
    }
    s
}

fn oracle_code(frame: &Frame, f: &MbLbpFeature, ox: u32, oy: u32) -> u8 {
    let b = |c: u32, r: u32| {
        block_sum(
            frame,
            ox + f.x + c * f.block_width,
            oy + f.y + r * f.block_height,
            f.block_width,
            f.block_height,
        )
    };
    let center = b(1, 1);
    // clockwise from top-left, most significant bit first
    let ring = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1)];
    ring.iter()
        .fold(0u8, |acc, &(c, r)| (acc << 1) | (b(c, r) >= center) as u8)
}

/// Reject level computed by evaluating every stage with no early exit.
pub fn oracle_stages_passed(model: &CascadeModel, frame: &Frame, x: u32, y: u32, scale: f64) -> u32 {
    let verdicts: Vec<bool> = model
        .stages()
        .iter()
        .map(|stage| {
            let sum: f32 = stage
                .weak()
                .iter()
                .map(|w| {
                    if w.lut.contains(oracle_code(frame, &w.feature.scaled(scale), x, y)) {
                        w.left
                    } else {
                        w.right
                    }
                })
                .sum();
            sum >= stage.threshold()
        })
        .collect();
    verdicts.iter().take_while(|&&v| v).count() as u32
}

/// All lattice windows, enumerated independently of the scanner.
pub fn oracle_scan(model: &CascadeModel, frame: &Frame, cfg: &ScanConfig, min_stages: u32) -> Vec<DetectionWindow> {
    let (w, h) = frame.dims();
    let base = model.base_width() as f64;
    let first = cfg.min_window.unwrap_or(model.base_width()) as f64 / base;
    let max = cfg.max_window.unwrap_or(w.min(h) as u32);
    let mut out = Vec::new();
    for k in 0.. {
        let scale = first * cfg.scale_factor.powi(k);
        let ww = (model.base_width() as f64 * scale).round() as u32;
        let wh = (model.base_height() as f64 * scale).round() as u32;
        if ww > max || wh > max {
            break;
        }
        let step = ((cfg.step_fraction * ww as f64).round() as u32).max(1);
        let mut reach = (ww, wh);
        for wk in model.stages().iter().flat_map(|s| s.weak()) {
            let f = wk.feature.scaled(scale);
            reach.0 = reach.0.max(f.x + 3 * f.block_width);
            reach.1 = reach.1.max(f.y + 3 * f.block_height);
        }
        let mut y = 0;
        while y + reach.1 <= h as u32 {
            let mut x = 0;
            while x + reach.0 <= w as u32 {
                let passed = oracle_stages_passed(model, frame, x, y, scale);
                if passed >= min_stages {
                    out.push(DetectionWindow {
                        x,
                        y,
                        width: ww,
                        height: wh,
                        scale,
                        stages_passed: passed,
                    });
                }
                x += step;
            }
            y += step;
        }
    }
    out
}

/// Two stages with two and one weak classifiers.
pub const TOY_NATIVE: &str = "FTCASCADE 1 24 24 2
STAGE 2 0.5
WEAK 2 3 4 4 1 -0.25 ffff0000ffff0000f0f0f0f0f0f0f0f00000ffff0000ffff8888888888888888
WEAK 9 1 5 3 0.75 -0.5 0f0f0f0f0f0f0f0fffffffff00000000aaaaaaaa5555555512345678abcdef01
STAGE 1 0
WEAK 0 12 8 4 1 -1 ffffffffffffffff0000000000000000ffffffffffffffff0000000000000000
";

// ---------------------------------------------------------------------------
// Scripted doubles

/// Frame whose first two pixels spell out `index`, for scripted doubles.
pub fn indexed_frame(w: usize, h: usize, index: usize) -> Frame {
    Frame::from_fn(w, h, |x, y| match (x, y) {
        (0, 0) => (index % 256) as u8,
        (1, 0) => (index / 256) as u8,
        _ => 0,
    })
    .unwrap()
}

pub fn frame_index(frame: &Frame) -> usize {
    frame.get(0, 0) as usize + 256 * frame.get(1, 0) as usize
}

/// Reports a face at a fixed spot on frames where `hit(index)` holds and
/// records every frame it was asked about.
pub struct ScriptedDetector<F: FnMut(usize) -> bool> {
    pub hit: F,
    pub calls: Vec<usize>,
    pub window: DetectionWindow,
}

impl<F: FnMut(usize) -> bool> ScriptedDetector<F> {
    pub fn new(hit: F) -> Self {
        Self {
            hit,
            calls: Vec::new(),
            window: DetectionWindow {
                x: 20,
                y: 20,
                width: 36,
                height: 36,
                scale: 1.5,
                stages_passed: 20,
            },
        }
    }
}

impl<F: FnMut(usize) -> bool> WindowDetector for ScriptedDetector<F> {
    fn detect(&mut self, frame: &Frame, min_stages: u32) -> facetrack::Result<Vec<DetectionWindow>> {
        let i = frame_index(frame);
        self.calls.push(i);
        // four stacked votes clear the default threshold
        let n = if (self.hit)(i) && self.window.stages_passed >= min_stages {
            4
        } else {
            0
        };
        Ok(vec![self.window; n])
    }
}

/// Constant-displacement flow.
pub struct ConstFlow(pub f32, pub f32);

impl FlowEstimator for ConstFlow {
    fn estimate(&mut self, from: &Frame, _to: &Frame) -> facetrack::Result<FlowField> {
        Ok(FlowField::constant(from.width(), from.height(), self.0, self.1))
    }
}

// ---------------------------------------------------------------------------
// Reference data

pub const FRONTAL_XML: &str = include_str!("../../../../models/lbpcascade_frontalface.xml");
const GOLDEN: &str = include_str!("../data/cascade_golden.txt");

/// A 24x24 patch with the reject level the reference detector gave it.
pub struct Golden {
    pub stages_passed: usize,
    pub accepted: bool,
    pub patch: Frame,
}

pub fn golden() -> Vec<Golden> {
    GOLDEN
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace();
            let stages_passed = it.next().unwrap().parse().unwrap();
            let accepted = it.next().unwrap() == "1";
            let hex = it.next().unwrap();
            let bytes = (0..hex.len())
                .step_by(2)
                .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap())
                .collect();
            Golden {
                stages_passed,
                accepted,
                patch: Frame::new(24, 24, bytes).unwrap(),
            }
        })
        .collect()
}
