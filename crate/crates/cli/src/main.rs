use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use facetrack::cascade::{parse_native, parse_standard_xml, serialize_native, CascadeModel, ParseError};
use facetrack::detector::{classic_detect, ScanConfig};
use facetrack::eval::{
    evaluate, format_detections, format_timings, parse_detections, parse_ground_truth, parse_timings, Detection,
    EvalError, EvalOptions, FrameDetections, DEFAULT_GT_OFFSET_Y, DEFAULT_MATCH_PX,
};
use facetrack::imgcore::Frame;
use facetrack::io::{list_frames, load_frame, DEFAULT_PATTERNS};
use facetrack::tracker::{Timings, Tracker, TrackerConfig};
use image::{Rgb, RgbImage};

/// Face tracking with cascade likelihood maps carried along optical flow.
#[derive(Parser)]
#[command(name = "facetrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track faces through a frame sequence.
    Track(RunArgs),
    /// Run the cascade detector independently on every frame.
    Classic(RunArgs),
    /// Score a detections file against ground truth.
    Eval(EvalArgs),
    /// Convert a standard XML LBP cascade to the native format.
    Convert { xml: PathBuf, native: PathBuf },
    /// Report the mean per-frame time split of a tracking run.
    Bench(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Cascade file, standard XML or native format.
    #[arg(long)]
    cascade: PathBuf,
    /// Directory of frames, read in file name order.
    #[arg(long)]
    frames: PathBuf,
    /// File name glob; may be repeated. Defaults to *.png and *.pgm.
    #[arg(long)]
    pattern: Vec<String>,
    /// Directory for detections.txt and timings.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Write annotated PNG frames here.
    #[arg(long)]
    annotate_dir: Option<PathBuf>,
    /// Write the likelihood map of each frame here as PGM.
    #[arg(long)]
    map_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    n: u32,
    #[arg(long, default_value_t = 0.5)]
    alpha: f32,
    #[arg(long, default_value_t = 15)]
    tau: u32,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    shrink: f64,
    #[arg(long, default_value_t = 65.0)]
    c: f32,
    #[arg(long, default_value_t = 1.1)]
    scale_factor: f64,
    /// Scan step as a fraction of the window width.
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// Grouping threshold for classic mode.
    #[arg(long, default_value_t = 3)]
    min_neighbors: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Timings file from a track or classic run.
    #[arg(long)]
    timings: Option<PathBuf>,
    /// Directory for metrics.txt and metrics.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MATCH_PX)]
    match_px: f64,
    #[arg(long, default_value_t = DEFAULT_GT_OFFSET_Y)]
    gt_offset_y: f64,
}

/// An error with the process exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: 1,
            error: e.into(),
        }
    }
}

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Track(args) => track(&args),
        Command::Classic(args) => classic(&args),
        Command::Eval(args) => eval(&args),
        Command::Convert { xml, native } => convert(&xml, &native),
        Command::Bench(args) => bench(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn parse_cascade(text: &str) -> Result<CascadeModel, ParseError> {
    if text.trim_start().starts_with("FTCASCADE") {
        parse_native(text.as_bytes())
    } else {
        parse_standard_xml(text)
    }
}

fn load_cascade(path: &Path) -> CliResult<CascadeModel> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read cascade {}", path.display()))
        .exit_with(2)?;
    parse_cascade(&text).map_err(|e| Failure {
        code: if matches!(e, ParseError::UnsupportedFeature { .. }) {
            5
        } else {
            1
        },
        error: anyhow!(e).context(format!("cannot parse cascade {}", path.display())),
    })
}

fn check_tau(cfg: &TrackerConfig, model: &CascadeModel) -> CliResult {
    if cfg.tau as usize > model.num_stages() {
        return Err(anyhow!("--tau {} exceeds the cascade's {} stages", cfg.tau, model.num_stages()).into());
    }
    Ok(())
}

fn frame_paths(args: &RunArgs) -> CliResult<Vec<PathBuf>> {
    if !args.frames.is_dir() {
        return Err(anyhow!("frame directory {} does not exist", args.frames.display())).exit_with(2);
    }
    let patterns: Vec<&str> = if args.pattern.is_empty() {
        DEFAULT_PATTERNS.to_vec()
    } else {
        args.pattern.iter().map(String::as_str).collect()
    };
    let paths = list_frames(&args.frames, &patterns).exit_with(2)?;
    if paths.is_empty() {
        return Err(anyhow!("no frames matching {patterns:?} in {}", args.frames.display())).exit_with(2);
    }
    Ok(paths)
}

fn read_frame(path: &Path) -> CliResult<Frame> {
    load_frame(path).exit_with(3)
}

impl RunArgs {
    fn scan(&self) -> ScanConfig {
        ScanConfig {
            scale_factor: self.scale_factor,
            step_fraction: self.step,
            ..Default::default()
        }
    }

    fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            n: self.n,
            alpha: self.alpha,
            tau: self.tau,
            shrink: self.shrink,
            c: self.c,
            scan: self.scan(),
            ..Default::default()
        }
    }
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::from)
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::from)
}

/// Rectangle outlines and center dots over a grayscale frame.
fn annotate(frame: &Frame, boxes: &[Detection], color: Rgb<u8>) -> RgbImage {
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let mut img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = frame.get(x as usize, y as usize);
        Rgb([v, v, v])
    });
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
    };
    for d in boxes {
        let x0 = (d.cx - d.w / 2.0).round() as i64;
        let y0 = (d.cy - d.h / 2.0).round() as i64;
        let x1 = (d.cx + d.w / 2.0).round() as i64 - 1;
        let y1 = (d.cy + d.h / 2.0).round() as i64 - 1;
        for x in x0..=x1 {
            put(x, y0);
            put(x, y1);
        }
        for y in y0..=y1 {
            put(x0, y);
            put(x1, y);
        }
        let (cx, cy) = (d.cx.floor() as i64, d.cy.floor() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                put(cx + dx, cy + dy);
            }
        }
    }
    img
}

const TRACKED: Rgb<u8> = Rgb([0, 220, 0]);
const REFRESHED: Rgb<u8> = Rgb([255, 255, 255]);

fn save_png(dir: &Path, index: usize, img: &RgbImage) -> CliResult {
    let path = dir.join(format!("frame_{index:05}.png"));
    img.save(&path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn track(args: &RunArgs) -> CliResult {
    let cfg = args.tracker_config();
    cfg.validate()?;
    let model = load_cascade(&args.cascade)?;
    let paths = frame_paths(args)?;
    check_tau(&cfg, &model)?;
    println!(
        "track: {} frames, {} stages, n={} alpha={} tau={} s={:.4} c={} scale_factor={} step={}",
        paths.len(),
        model.num_stages(),
        cfg.n,
        cfg.alpha,
        cfg.tau,
        cfg.shrink,
        cfg.c,
        cfg.scan.scale_factor,
        cfg.scan.step_fraction
    );
    for dir in [Some(&args.out), args.annotate_dir.as_ref(), args.map_dir.as_ref()]
        .into_iter()
        .flatten()
    {
        create_dir(dir)?;
    }
    let mut tracker = Tracker::with_cascade(&model, cfg)?;
    let (mut dets, mut rows) = (Vec::new(), Vec::new());
    for (i, path) in paths.iter().enumerate() {
        let frame = read_frame(path)?;
        let r = tracker
            .step(&frame)
            .with_context(|| format!("frame {}", path.display()))?;
        let detections: Vec<Detection> = r.faces.iter().map(Detection::from).collect();
        if let Some(dir) = &args.annotate_dir {
            let color = if r.refreshed { REFRESHED } else { TRACKED };
            save_png(dir, i, &annotate(&frame, &detections, color))?;
        }
        if let (Some(dir), Some(map)) = (&args.map_dir, tracker.map()) {
            let path = dir.join(format!("map_{i:05}.pgm"));
            let file = std::fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
            map.write_pgm(std::io::BufWriter::new(file))?;
        }
        dets.push(FrameDetections {
            frame_index: i as u64,
            detections,
        });
        rows.push((i as u64, r.timings, r.refreshed));
    }
    write_outputs(&args.out, &dets, &rows)?;
    let refreshes = rows.iter().filter(|r| r.2).count();
    let found = dets.iter().filter(|d| !d.detections.is_empty()).count();
    println!("{found}/{} frames with a face, {refreshes} refreshes", dets.len());
    Ok(())
}

fn classic(args: &RunArgs) -> CliResult {
    let scan = args.scan();
    let model = load_cascade(&args.cascade)?;
    let paths = frame_paths(args)?;
    println!(
        "classic: {} frames, {} stages, min_neighbors={} scale_factor={} step={}",
        paths.len(),
        model.num_stages(),
        args.min_neighbors,
        scan.scale_factor,
        scan.step_fraction
    );
    for dir in [Some(&args.out), args.annotate_dir.as_ref()].into_iter().flatten() {
        create_dir(dir)?;
    }
    let (mut dets, mut rows) = (Vec::new(), Vec::new());
    for (i, path) in paths.iter().enumerate() {
        let frame = read_frame(path)?;
        let start = Instant::now();
        let rects = classic_detect(&model, &frame, &scan, args.min_neighbors)
            .with_context(|| format!("frame {}", path.display()))?;
        let detect_ms = start.elapsed().as_secs_f64() * 1e3;
        let detections: Vec<Detection> = rects.iter().map(Detection::from).collect();
        if let Some(dir) = &args.annotate_dir {
            save_png(dir, i, &annotate(&frame, &detections, REFRESHED))?;
        }
        dets.push(FrameDetections {
            frame_index: i as u64,
            detections,
        });
        let timings = Timings {
            detect_ms,
            ..Default::default()
        };
        rows.push((i as u64, timings, true));
    }
    write_outputs(&args.out, &dets, &rows)?;
    let found = dets.iter().filter(|d| !d.detections.is_empty()).count();
    println!("{found}/{} frames with a face", dets.len());
    Ok(())
}

fn write_outputs(out: &Path, dets: &[FrameDetections], rows: &[(u64, Timings, bool)]) -> CliResult {
    write_file(&out.join("detections.txt"), &format_detections(dets))?;
    write_file(&out.join("timings.txt"), &format_timings(rows))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .exit_with(2)
}

fn eval_exit(e: EvalError) -> Failure {
    let code = match e {
        EvalError::FrameCountMismatch { .. } | EvalError::TimingCountMismatch { .. } => 4,
        _ => 1,
    };
    Failure { code, error: e.into() }
}

fn parse_err(path: &Path) -> impl Fn(EvalError) -> Failure + '_ {
    move |e| Failure {
        code: 1,
        error: anyhow!(e).context(path.display().to_string()),
    }
}

fn eval(args: &EvalArgs) -> CliResult {
    let dets = parse_detections(&read_text(&args.detections)?).map_err(parse_err(&args.detections))?;
    let gt = parse_ground_truth(&read_text(&args.gt)?).map_err(parse_err(&args.gt))?;
    let timings = match &args.timings {
        Some(p) => {
            let rows = parse_timings(&read_text(p)?).map_err(parse_err(p))?;
            Some(rows.into_iter().map(|r| r.1).collect::<Vec<_>>())
        }
        None => None,
    };
    let opts = EvalOptions {
        match_px: args.match_px,
        gt_offset_y: args.gt_offset_y,
    };
    let report = evaluate(&dets, &gt, timings.as_deref(), &opts).map_err(eval_exit)?;
    print!("{}", report.to_text());
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join("metrics.txt"), &report.to_text())?;
        write_file(&out.join("metrics.json"), &report.to_json())?;
    }
    Ok(())
}

fn convert(xml: &Path, native: &Path) -> CliResult {
    let text = read_text(xml)?;
    let model = parse_standard_xml(&text).map_err(|e| Failure {
        code: if matches!(e, ParseError::UnsupportedFeature { .. }) {
            5
        } else {
            1
        },
        error: anyhow!(e).context(format!("cannot parse {}", xml.display())),
    })?;
    write_file(native, &serialize_native(&model))?;
    println!(
        "converted {} stages, {}x{} base window, to {}",
        model.num_stages(),
        model.base_width(),
        model.base_height(),
        native.display()
    );
    Ok(())
}

fn bench(args: &RunArgs) -> CliResult {
    let cfg = args.tracker_config();
    cfg.validate()?;
    let model = load_cascade(&args.cascade)?;
    let paths = frame_paths(args)?;
    check_tau(&cfg, &model)?;
    let frames = paths.iter().map(|p| read_frame(p)).collect::<CliResult<Vec<_>>>()?;
    let mut tracker = Tracker::with_cascade(&model, cfg)?;
    let mut sum = Timings::default();
    let start = Instant::now();
    for f in &frames {
        let t = tracker.step(f)?.timings;
        sum.flow_ms += t.flow_ms;
        sum.detect_ms += t.detect_ms;
        sum.other_ms += t.other_ms;
    }
    let n = frames.len() as f64;
    let wall = start.elapsed().as_secs_f64() * 1e3 / n;
    let mean = Timings {
        flow_ms: sum.flow_ms / n,
        detect_ms: sum.detect_ms / n,
        other_ms: sum.other_ms / n,
    };
    let (w, h) = frames[0].dims();
    let mut s = String::new();
    writeln!(s, "frames {} ({w}x{h})", frames.len()).unwrap();
    writeln!(s, "flow_ms {:.3}", mean.flow_ms).unwrap();
    writeln!(s, "detect_ms {:.3}", mean.detect_ms).unwrap();
    writeln!(s, "other_ms {:.3}", mean.other_ms).unwrap();
    writeln!(s, "total_ms {:.3}", mean.total_ms()).unwrap();
    writeln!(s, "wall_ms {wall:.3}").unwrap();
    print!("{s}");
    Ok(())
}
