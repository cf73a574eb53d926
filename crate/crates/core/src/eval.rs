//! Tracking metrics against eye-position ground truth.
//!
//! The face center is estimated as the midpoint between the eyes, moved
//! down by a fixed offset. A frame counts as a valid detection when the
//! nearest reported center is strictly closer than `match_px`; every other
//! reported face is a false positive, and a frame without any face is a
//! false negative. Stability is the distance between valid centers of
//! directly consecutive frames.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::detector::Rect;
use crate::likelihood::FaceBox;
use crate::tracker::Timings;

pub const DEFAULT_MATCH_PX: f64 = 20.0;
pub const DEFAULT_GT_OFFSET_Y: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("detection rate of an empty sequence")]
    Empty,
    #[error("{detections} detection frames but {ground_truth} ground-truth records")]
    FrameCountMismatch { detections: usize, ground_truth: usize },
    #[error("{timings} timing rows for {frames} frames")]
    TimingCountMismatch { timings: usize, frames: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FaceCenter {
    pub x: f64,
    pub y: f64,
}

impl FaceCenter {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &FaceCenter) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthRecord {
    pub frame_index: u64,
    pub left_eye: (f64, f64),
    pub right_eye: (f64, f64),
}

/// Eye midpoint shifted down by `offset_y` (image y grows downwards).
pub fn gt_face_center(rec: &GroundTruthRecord, offset_y: f64) -> FaceCenter {
    let ((x1, y1), (x2, y2)) = (rec.left_eye, rec.right_eye);
    FaceCenter::new(x1 + (x2 - x1) / 2.0, y1 + (y2 - y1) / 2.0 + offset_y)
}

/// A reported face as exchanged between `track` and `eval`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub peak: f64,
}

impl Detection {
    pub fn center(&self) -> FaceCenter {
        FaceCenter::new(self.cx, self.cy)
    }
}

impl From<&FaceBox> for Detection {
    fn from(f: &FaceBox) -> Self {
        Self {
            cx: f.center_x,
            cy: f.center_y,
            w: f.width,
            h: f.height,
            peak: f.peak as f64,
        }
    }
}

impl From<&Rect> for Detection {
    fn from(r: &Rect) -> Self {
        let (cx, cy) = r.center();
        Self {
            cx,
            cy,
            w: r.width as f64,
            h: r.height as f64,
            peak: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub detections: Vec<Detection>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMatch {
    pub valid: bool,
    /// Distance of the nearest detection, when there is one.
    pub distance: Option<f64>,
    /// Center of the valid detection.
    pub center: Option<FaceCenter>,
    pub false_positives: usize,
    pub false_negative: bool,
}

/// Scores one frame. Ties for the nearest detection go to the lowest index.
///
/// Without ground truth every detection is a false positive and an empty
/// frame is not a miss.
pub fn match_frame(detections: &[FaceCenter], gt: Option<FaceCenter>, match_px: f64) -> FrameMatch {
    let miss = FrameMatch {
        valid: false,
        distance: None,
        center: None,
        false_positives: detections.len(),
        false_negative: false,
    };
    let Some(gt) = gt else { return miss };
    if detections.is_empty() {
        return FrameMatch {
            false_negative: true,
            ..miss
        };
    }
    let (best, dist) = detections
        .iter()
        .enumerate()
        .map(|(i, d)| (i, d.distance(&gt)))
        .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
    if dist < match_px {
        FrameMatch {
            valid: true,
            distance: Some(dist),
            center: Some(detections[best]),
            false_positives: detections.len() - 1,
            false_negative: false,
        }
    } else {
        FrameMatch {
            distance: Some(dist),
            ..miss
        }
    }
}

/// Fraction of frames with a valid detection.
pub fn detection_rate(valid: &[bool]) -> Result<f64, EvalError> {
    if valid.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(valid.iter().filter(|&&v| v).count() as f64 / valid.len() as f64)
}

/// Center displacement between each pair of directly consecutive frames.
pub fn stability(centers: &[(u64, FaceCenter)]) -> Vec<f64> {
    centers
        .windows(2)
        .filter(|p| p[1].0 == p[0].0 + 1)
        .map(|p| p[0].1.distance(&p[1].1))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub match_px: f64,
    pub gt_offset_y: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            match_px: DEFAULT_MATCH_PX,
            gt_offset_y: DEFAULT_GT_OFFSET_Y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMetrics {
    pub frame_index: u64,
    pub valid: bool,
    pub distance: Option<f64>,
    /// Displacement from the previous frame's valid center.
    pub stability: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub detection_rate: f64,
    /// Mean distance over valid frames; absent if there are none.
    pub mean_accuracy_px: Option<f64>,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub mean_stability_px: Option<f64>,
    pub mean_flow_ms: Option<f64>,
    pub mean_detect_ms: Option<f64>,
    pub mean_other_ms: Option<f64>,
    #[serde(skip)]
    pub per_frame: Vec<FrameMetrics>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn evaluate(
    frames: &[FrameDetections],
    gt: &[GroundTruthRecord],
    timings: Option<&[Timings]>,
    opts: &EvalOptions,
) -> Result<MetricsReport, EvalError> {
    if frames.len() != gt.len() {
        return Err(EvalError::FrameCountMismatch {
            detections: frames.len(),
            ground_truth: gt.len(),
        });
    }
    if let Some(t) = timings {
        if t.len() != frames.len() {
            return Err(EvalError::TimingCountMismatch {
                timings: t.len(),
                frames: frames.len(),
            });
        }
    }
    let by_index: BTreeMap<u64, FaceCenter> = gt
        .iter()
        .map(|r| (r.frame_index, gt_face_center(r, opts.gt_offset_y)))
        .collect();

    let mut per_frame = Vec::with_capacity(frames.len());
    let mut valid_centers = Vec::new();
    let (mut fp, mut fneg) = (0, 0);
    for f in frames {
        let centers: Vec<FaceCenter> = f.detections.iter().map(Detection::center).collect();
        let m = match_frame(&centers, by_index.get(&f.frame_index).copied(), opts.match_px);
        fp += m.false_positives;
        fneg += m.false_negative as usize;
        let stab = match (m.center, valid_centers.last()) {
            (Some(c), Some(&(prev_index, prev))) if f.frame_index == prev_index + 1 => Some(c.distance(&prev)),
            _ => None,
        };
        if let Some(c) = m.center {
            valid_centers.push((f.frame_index, c));
        }
        per_frame.push(FrameMetrics {
            frame_index: f.frame_index,
            valid: m.valid,
            distance: m.valid.then_some(m.distance).flatten(),
            stability: stab,
        });
    }
    let valid: Vec<bool> = per_frame.iter().map(|p| p.valid).collect();
    let t = timings.unwrap_or(&[]);
    Ok(MetricsReport {
        frames: frames.len(),
        detection_rate: detection_rate(&valid)?,
        mean_accuracy_px: mean(per_frame.iter().filter_map(|p| p.distance)),
        false_positives: fp,
        false_negatives: fneg,
        mean_stability_px: mean(stability(&valid_centers)),
        mean_flow_ms: mean(t.iter().map(|t| t.flow_ms)),
        mean_detect_ms: mean(t.iter().map(|t| t.detect_ms)),
        mean_other_ms: mean(t.iter().map(|t| t.other_ms)),
        per_frame,
    })
}

impl MetricsReport {
    /// `key value` lines; absent values are written as `n/a`.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        writeln!(s, "frames {}", self.frames).unwrap();
        writeln!(s, "detection_rate {:.4}", self.detection_rate).unwrap();
        writeln!(s, "mean_accuracy_px {}", opt(self.mean_accuracy_px)).unwrap();
        writeln!(s, "false_positives {}", self.false_positives).unwrap();
        writeln!(s, "false_negatives {}", self.false_negatives).unwrap();
        writeln!(s, "mean_stability_px {}", opt(self.mean_stability_px)).unwrap();
        writeln!(s, "mean_flow_ms {}", opt(self.mean_flow_ms)).unwrap();
        writeln!(s, "mean_detect_ms {}", opt(self.mean_detect_ms)).unwrap();
        writeln!(s, "mean_other_ms {}", opt(self.mean_other_ms)).unwrap();
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Meaningful lines of a text file with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("");
        let toks: Vec<&str> = l.split_whitespace().collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    })
}

fn field<T: std::str::FromStr>(line: usize, tok: &str, what: &str) -> Result<T, EvalError> {
    tok.parse().map_err(|_| EvalError::Parse {
        line,
        message: format!("{what}: cannot parse {tok:?}"),
    })
}

/// Reads `frameIndex x1 y1 x2 y2` lines; `#` starts a comment.
pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthRecord>, EvalError> {
    content_lines(text)
        .map(|(line, t)| {
            if t.len() != 5 {
                return Err(EvalError::Parse {
                    line,
                    message: format!("expected 5 fields, found {}", t.len()),
                });
            }
            let mut c = [0f64; 4];
            for (k, v) in c.iter_mut().enumerate() {
                *v = field(line, t[k + 1], "coordinate")?;
                if !v.is_finite() {
                    return Err(EvalError::Parse {
                        line,
                        message: "coordinates must be finite".into(),
                    });
                }
            }
            Ok(GroundTruthRecord {
                frame_index: field(line, t[0], "frame index")?,
                left_eye: (c[0], c[1]),
                right_eye: (c[2], c[3]),
            })
        })
        .collect()
}

/// One line per frame: the index, then `cx cy w h peak` per face.
pub fn format_detections(frames: &[FrameDetections]) -> String {
    let mut s = String::new();
    for f in frames {
        write!(s, "{}", f.frame_index).unwrap();
        for d in &f.detections {
            write!(s, " {:.3} {:.3} {:.3} {:.3} {:.3}", d.cx, d.cy, d.w, d.h, d.peak).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<FrameDetections>, EvalError> {
    content_lines(text)
        .map(|(line, t)| {
            if (t.len() - 1) % 5 != 0 {
                return Err(EvalError::Parse {
                    line,
                    message: format!("expected frame index plus groups of 5 values, found {} fields", t.len()),
                });
            }
            let detections = t[1..]
                .chunks(5)
                .map(|g| {
                    Ok(Detection {
                        cx: field(line, g[0], "cx")?,
                        cy: field(line, g[1], "cy")?,
                        w: field(line, g[2], "w")?,
                        h: field(line, g[3], "h")?,
                        peak: field(line, g[4], "peak")?,
                    })
                })
                .collect::<Result<_, EvalError>>()?;
            Ok(FrameDetections {
                frame_index: field(line, t[0], "frame index")?,
                detections,
            })
        })
        .collect()
}

/// One line per frame: `frameIndex flow_ms detect_ms other_ms refreshed`.
pub fn format_timings(rows: &[(u64, Timings, bool)]) -> String {
    let mut s = String::new();
    for (i, t, refreshed) in rows {
        writeln!(
            s,
            "{i} {:.3} {:.3} {:.3} {}",
            t.flow_ms, t.detect_ms, t.other_ms, *refreshed as u8
        )
        .unwrap();
    }
    s
}

pub fn parse_timings(text: &str) -> Result<Vec<(u64, Timings, bool)>, EvalError> {
    content_lines(text)
        .map(|(line, t)| {
            if t.len() != 5 {
                return Err(EvalError::Parse {
                    line,
                    message: format!("expected 5 fields, found {}", t.len()),
                });
            }
            let refreshed = match t[4] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(EvalError::Parse {
                        line,
                        message: format!("refreshed flag must be 0 or 1, found {other:?}"),
                    })
                }
            };
            Ok((
                field(line, t[0], "frame index")?,
                Timings {
                    flow_ms: field(line, t[1], "flow_ms")?,
                    detect_ms: field(line, t[2], "detect_ms")?,
                    other_ms: field(line, t[3], "other_ms")?,
                },
                refreshed,
            ))
        })
        .collect()
}
