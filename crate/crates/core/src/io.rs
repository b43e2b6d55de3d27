//! Frame ingestion, result files, and the library side of the command-line
//! tool.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::detector::{Detector, FileDetector, MockConfig, MockDetector};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, ScoredBox};
use crate::geometry::{BBox, Detection, DetectionMode};
use crate::pipeline::{Mode, Pipeline, StepOutput};
use crate::raster::{Frame, Raster};
use crate::synth::{Scene, SceneSpec};

const IMAGE_EXTS: &[&str] = &["png", "pgm", "ppm", "pnm", "pbm", "jpg", "jpeg", "bmp"];

/// ITU-R BT.601 luma.
pub fn luma601(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Loads one image as 8-bit luminance.
pub fn load_gray(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma601(p[0], p[1], p[2]))
            .collect(),
    };
    Raster::from_vec(w, h, data)
}

/// Sorted image files of a directory, all of one size.
#[derive(Debug, Clone)]
pub struct ImageSequence {
    paths: Vec<PathBuf>,
    dims: (usize, usize),
}

impl ImageSequence {
    pub fn open(dir: &Path) -> Result<Self> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let p = entry.map_err(|e| Error::io(dir, e))?.path();
            let ext = p
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase());
            if p.is_file() && ext.is_some_and(|e| IMAGE_EXTS.contains(&e.as_str())) {
                paths.push(p);
            }
        }
        paths.sort();
        let first = paths
            .first()
            .ok_or_else(|| Error::Input(format!("no images in {}", dir.display())))?;
        let dims = Self::dims_of(first)?;
        for p in &paths[1..] {
            let d = Self::dims_of(p)?;
            if d != dims {
                return Err(Error::Input(format!(
                    "{} is {}x{}, expected {}x{}",
                    p.display(),
                    d.0,
                    d.1,
                    dims.0,
                    dims.1
                )));
            }
        }
        Ok(Self { paths, dims })
    }

    fn dims_of(p: &Path) -> Result<(usize, usize)> {
        let (w, h) = image::image_dimensions(p).map_err(|source| Error::Image {
            path: p.to_path_buf(),
            source,
        })?;
        Ok((w as usize, h as usize))
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    pub fn frames(&self) -> impl Iterator<Item = Result<Frame>> + '_ {
        self.paths
            .iter()
            .enumerate()
            .map(|(i, p)| load_gray(p).map(|g| Frame::new(i, g)))
    }
}

/// Concatenated 8-bit grayscale frames of known size.
pub struct RawStream {
    reader: BufReader<File>,
    path: PathBuf,
    dims: (usize, usize),
    next: usize,
}

impl RawStream {
    pub fn open(path: &Path, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input("raw stream dimensions must be positive".into()));
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let frame = (width * height) as u64;
        if len == 0 || len % frame != 0 {
            return Err(Error::Input(format!(
                "{}: {len} bytes is not a whole number of {width}x{height} frames",
                path.display()
            )));
        }
        Ok(Self {
            reader: BufReader::new(file),
            path: path.to_path_buf(),
            dims: (width, height),
            next: 0,
        })
    }
}

impl Iterator for RawStream {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut buf = vec![0u8; self.dims.0 * self.dims.1];
        match self.reader.read_exact(&mut buf) {
            Ok(()) => {
                let i = self.next;
                self.next += 1;
                Some(Raster::from_vec(self.dims.0, self.dims.1, buf).map(|g| Frame::new(i, g)))
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => None,
            Err(e) => Some(Err(Error::io(&self.path, e))),
        }
    }
}

/// Writes binary PGM.
pub fn write_pgm(path: &Path, img: &Raster) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write!(f, "P5\n{} {}\n255\n", img.width(), img.height())
        .and_then(|_| f.write_all(img.data()))
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes binary PPM from interleaved RGB.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write!(f, "P6\n{width} {height}\n255\n")
        .and_then(|_| f.write_all(rgb))
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

/// Annotation color per mode.
pub fn mode_color(mode: DetectionMode) -> [u8; 3] {
    match mode {
        DetectionMode::GlobalYolo => [0, 255, 0],
        DetectionMode::GlobalMotion => [102, 204, 255],
        DetectionMode::LocalYolo => [0, 0, 160],
        DetectionMode::LocalMotion => [255, 0, 0],
    }
}

pub const ROI_COLOR: [u8; 3] = [255, 255, 0];

/// Draws a one-pixel outline just outside `b` (so tiny boxes stay visible).
fn draw_rect(rgb: &mut [u8], dims: (usize, usize), b: &BBox, color: [u8; 3]) {
    let (w, h) = (dims.0 as i64, dims.1 as i64);
    let x0 = b.x().floor() as i64 - 1;
    let y0 = b.y().floor() as i64 - 1;
    let x1 = b.right().ceil() as i64;
    let y1 = b.bottom().ceil() as i64;
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            let i = 3 * (y * w + x) as usize;
            rgb[i..i + 3].copy_from_slice(&color);
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

/// Gray frame as RGB with the ROI and the emitted box outlined.
pub fn annotate(frame: &Frame, out: &StepOutput) -> Vec<u8> {
    let dims = frame.gray.dims();
    let mut rgb: Vec<u8> = frame.gray.data().iter().flat_map(|&v| [v, v, v]).collect();
    if let Some(r) = out.roi {
        draw_rect(&mut rgb, dims, &r, ROI_COLOR);
    }
    if let Some(d) = &out.detection {
        draw_rect(&mut rgb, dims, &d.bbox, mode_color(d.mode));
    }
    rgb
}

/// One line of the detections JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub class_id: i32,
    pub mode: DetectionMode,
}

impl DetectionRow {
    pub fn new(frame: usize, d: &Detection) -> Self {
        Self {
            frame,
            x: d.bbox.x(),
            y: d.bbox.y(),
            w: d.bbox.w(),
            h: d.bbox.h(),
            score: d.score(),
            class_id: d.class_id,
            mode: d.mode,
        }
    }
}

/// JSONL detections writer, flushed after every frame.
pub struct JsonlWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    /// Writes one row; rejects boxes outside the frame.
    pub fn write(&mut self, frame: usize, d: &Detection, dims: (usize, usize)) -> Result<()> {
        let b = &d.bbox;
        let tol = 1e-9;
        if b.x() < -tol || b.y() < -tol || b.right() > dims.0 as f64 + tol || b.bottom() > dims.1 as f64 + tol {
            return Err(Error::Input(format!("frame {frame}: box outside frame bounds")));
        }
        let line = serde_json::to_string(&DetectionRow::new(frame, d))
            .map_err(|e| Error::Input(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DetectionRow>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: DetectionRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads header-less `frame,x,y,w,h` rows.
pub fn read_gt_csv(path: &Path) -> Result<BTreeMap<usize, Vec<BBox>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut out: BTreeMap<usize, Vec<BBox>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        if rec.len() != 5 {
            return Err(perr(format!("expected 5 fields, found {}", rec.len())));
        }
        let frame: usize = rec[0].parse().map_err(|_| perr(format!("bad frame index {:?}", &rec[0])))?;
        let mut v = [0.0; 4];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = rec[k + 1]
                .parse()
                .map_err(|_| perr(format!("bad number {:?}", &rec[k + 1])))?;
        }
        let b = BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| perr(e.to_string()))?;
        out.entry(frame).or_default().push(b);
    }
    Ok(out)
}

pub fn write_gt_csv(path: &Path, truth: &[Option<BBox>]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (t, b) in truth.iter().enumerate() {
        if let Some(b) = b {
            writeln!(f, "{t},{},{},{},{}", b.x(), b.y(), b.w(), b.h()).map_err(|e| Error::io(path, e))?;
        }
    }
    f.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSource {
    Directory { path: PathBuf },
    Raw { path: PathBuf, width: usize, height: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorChoice {
    /// Ground-truth replay with misses and score noise. Without an explicit
    /// path the input directory's `gt.csv` is used.
    Mock {
        #[serde(default)]
        ground_truth: Option<PathBuf>,
        #[serde(default)]
        config: MockConfig,
    },
    File { path: PathBuf },
}

impl Default for DetectorChoice {
    fn default() -> Self {
        DetectorChoice::Mock {
            ground_truth: None,
            config: MockConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<InputSource>,
    pub detector: DetectorChoice,
    pub pipeline: PipelineConfig,
    pub out_dir: PathBuf,
    pub annotate: bool,
    pub debug_dumps: bool,
    /// Overrides the mock detector's seed.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            detector: DetectorChoice::default(),
            pipeline: PipelineConfig::default(),
            out_dir: PathBuf::from("out"),
            annotate: false,
            debug_dumps: false,
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    pub emissions: usize,
    pub per_mode: BTreeMap<String, usize>,
    /// Frames per second over the whole run, decoding and writing included.
    pub fps: f64,
    /// Frames per second counting pipeline steps only.
    pub pipeline_fps: f64,
    pub local_frames: usize,
    /// Pipeline-step rate over frames processed in local mode.
    pub local_fps: Option<f64>,
}

/// Where the per-frame results go.
#[derive(Default)]
pub struct Sinks {
    pub jsonl: Option<JsonlWriter>,
    pub annotate_dir: Option<PathBuf>,
    pub debug_dir: Option<PathBuf>,
}

/// Drives the pipeline over a frame stream.
pub fn run_stream(
    frames: impl Iterator<Item = Result<Frame>>,
    pipeline: &mut Pipeline,
    detector: &mut dyn Detector,
    sinks: &mut Sinks,
) -> Result<RunSummary> {
    let start = Instant::now();
    let mut busy = Duration::ZERO;
    let mut busy_local = Duration::ZERO;
    let mut summary = RunSummary::default();
    for m in DetectionMode::ALL {
        summary.per_mode.insert(m.as_str().to_string(), 0);
    }
    for frame in frames {
        let frame = frame?;
        let dims = frame.gray.dims();
        let keep = (sinks.annotate_dir.is_some()).then(|| frame.clone());
        let t0 = Instant::now();
        let out = pipeline.step(frame, detector)?;
        let spent = t0.elapsed();
        busy += spent;
        if out.mode == Mode::Local {
            busy_local += spent;
            summary.local_frames += 1;
        }
        summary.frames += 1;
        if let Some(d) = &out.detection {
            summary.emissions += 1;
            *summary.per_mode.entry(d.mode.as_str().to_string()).or_default() += 1;
            if let Some(w) = sinks.jsonl.as_mut() {
                w.write(out.frame_index, d, dims)?;
            }
        }
        if let Some(w) = sinks.jsonl.as_mut() {
            w.flush()?;
        }
        if let (Some(dir), Some(f)) = (&sinks.annotate_dir, &keep) {
            let p = dir.join(format!("frame_{:05}.ppm", out.frame_index));
            write_ppm(&p, dims.0, dims.1, &annotate(f, &out))?;
        }
        if let (Some(dir), Some(dbg)) = (&sinks.debug_dir, &out.debug) {
            let stem = format!("frame_{:05}", out.frame_index);
            write_pgm(&dir.join(format!("{stem}_aligned.pgm")), &dbg.aligned)?;
            write_pgm(&dir.join(format!("{stem}_diff.pgm")), &dbg.diff)?;
            write_pgm(&dir.join(format!("{stem}_binary.pgm")), &dbg.binary)?;
            write_pgm(&dir.join(format!("{stem}_cleaned.pgm")), &dbg.cleaned)?;
        }
    }
    let rate = |n: usize, d: Duration| {
        if d.as_secs_f64() > 0.0 {
            n as f64 / d.as_secs_f64()
        } else {
            0.0
        }
    };
    summary.fps = rate(summary.frames, start.elapsed());
    summary.pipeline_fps = rate(summary.frames, busy);
    if summary.local_frames > 0 {
        summary.local_fps = Some(rate(summary.local_frames, busy_local));
    }
    Ok(summary)
}

fn make_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Builds the detector named by the config, loading any files it needs.
pub fn build_detector(cfg: &RunConfig, frame_count: usize) -> Result<Box<dyn Detector>> {
    match &cfg.detector {
        DetectorChoice::File { path } => Ok(Box::new(FileDetector::load(path)?)),
        DetectorChoice::Mock {
            ground_truth,
            config,
        } => {
            let gt_path = match (ground_truth, &cfg.input) {
                (Some(p), _) => p.clone(),
                (None, Some(InputSource::Directory { path })) => path.join("gt.csv"),
                (None, _) => {
                    return Err(Error::Config(
                        "mock detector needs a ground-truth file for raw input".into(),
                    ))
                }
            };
            let gt = read_gt_csv(&gt_path)?;
            let n = frame_count.max(gt.keys().next_back().map_or(0, |k| k + 1));
            let truth: Vec<Option<BBox>> = (0..n)
                .map(|t| gt.get(&t).and_then(|v| v.first().copied()))
                .collect();
            let mut mc = config.clone();
            if let Some(s) = cfg.seed {
                mc.seed = s;
            }
            Ok(Box::new(MockDetector::new(truth, mc)?))
        }
    }
}

/// Runs the pipeline per `cfg`, writing `detections.jsonl`, `summary.json`
/// and any requested frame dumps under `cfg.out_dir`.
pub fn run_command(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.pipeline.validate()?;
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| Error::Config("no input given".into()))?;
    let (frames, frame_count): (Box<dyn Iterator<Item = Result<Frame>>>, usize) = match &input {
        InputSource::Directory { path } => {
            let seq = ImageSequence::open(path)?;
            let n = seq.len();
            let paths = seq.paths().to_vec();
            let iter = paths
                .into_iter()
                .enumerate()
                .map(|(i, p)| load_gray(&p).map(|g| Frame::new(i, g)));
            (Box::new(iter), n)
        }
        InputSource::Raw {
            path,
            width,
            height,
        } => (Box::new(RawStream::open(path, *width, *height)?), 0),
    };
    let mut detector = build_detector(cfg, frame_count)?;

    make_dir(&cfg.out_dir)?;
    let mut sinks = Sinks {
        jsonl: Some(JsonlWriter::create(&cfg.out_dir.join("detections.jsonl"))?),
        ..Default::default()
    };
    if cfg.annotate {
        let d = cfg.out_dir.join("annotated");
        make_dir(&d)?;
        sinks.annotate_dir = Some(d);
    }
    if cfg.debug_dumps {
        let d = cfg.out_dir.join("debug");
        make_dir(&d)?;
        sinks.debug_dir = Some(d);
    }
    let mut pipeline = Pipeline::new(cfg.pipeline.clone())?.with_debug(cfg.debug_dumps);
    let summary = run_stream(frames, &mut pipeline, detector.as_mut(), &mut sinks)?;
    let p = cfg.out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Input(e.to_string()))?;
    fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(summary)
}

/// Per-frame predictions from a JSONL or CSV detections file.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<usize, Vec<ScoredBox>>> {
    let mut out: BTreeMap<usize, Vec<ScoredBox>> = BTreeMap::new();
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        for r in crate::detector::read_detections_csv(path)? {
            out.entry(r.frame).or_default().push(ScoredBox {
                bbox: r.bbox,
                score: r.score,
            });
        }
    } else {
        for r in read_jsonl(path)? {
            let bbox = BBox::new(r.x, r.y, r.w, r.h)?;
            out.entry(r.frame).or_default().push(ScoredBox {
                bbox,
                score: r.score,
            });
        }
    }
    Ok(out)
}

/// Evaluates a predictions file against a ground-truth CSV. Writes
/// `report.txt` and `pr_curve.csv` when `out_dir` is given.
pub fn eval_command(pred_path: &Path, gt_path: &Path, iou_t: f64, out_dir: Option<&Path>) -> Result<EvalReport> {
    let preds = read_predictions(pred_path)?;
    let gts = read_gt_csv(gt_path)?;
    let n = preds
        .keys()
        .chain(gts.keys())
        .max()
        .map_or(0, |m| m + 1);
    let p: Vec<Vec<ScoredBox>> = (0..n).map(|t| preds.get(&t).cloned().unwrap_or_default()).collect();
    let g: Vec<Vec<BBox>> = (0..n).map(|t| gts.get(&t).cloned().unwrap_or_default()).collect();
    let report = evaluate(&p, &g, iou_t)?;
    if let Some(dir) = out_dir {
        make_dir(dir)?;
        let rp = dir.join("report.txt");
        fs::write(&rp, report.to_text()).map_err(|e| Error::io(&rp, e))?;
        let cp = dir.join("pr_curve.csv");
        fs::write(&cp, report.pr_curve_csv()).map_err(|e| Error::io(&cp, e))?;
    }
    Ok(report)
}

pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Spec(format!("{}: {e}", path.display())))
}

/// Renders a scene to `out_dir` as `frame_NNNNN.pgm` plus `gt.csv` and the
/// resolved `spec.json`. Returns the number of frames written.
pub fn synth_command(spec: &SceneSpec, out_dir: &Path) -> Result<usize> {
    let scene = Scene::new(spec.clone())?;
    make_dir(out_dir)?;
    for f in scene.frames() {
        write_pgm(&out_dir.join(format!("frame_{:05}.pgm", f.index)), &f.gray)?;
    }
    write_gt_csv(&out_dir.join("gt.csv"), &scene.ground_truth_all())?;
    let sp = out_dir.join("spec.json");
    let text = serde_json::to_string_pretty(spec).map_err(|e| Error::Spec(e.to_string()))?;
    fs::write(&sp, text + "\n").map_err(|e| Error::io(&sp, e))?;
    Ok(scene.len())
}
