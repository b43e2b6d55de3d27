use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tinytrack::detector::MockConfig;
use tinytrack::io::{
    eval_command, read_scene_spec, run_command, synth_command, DetectorChoice, InputSource,
    RunConfig,
};
use tinytrack::synth::SceneSpec;

/// Tiny flying-target detection and tracking on image sequences.
#[derive(Parser)]
#[command(name = "tinytrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorKind {
    Mock,
    File,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tracker over a frame sequence.
    Run {
        /// Directory of images, or a raw 8-bit stream with --raw-size.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Treat --input as concatenated 8-bit frames of this size (WxH).
        #[arg(long, value_name = "WxH")]
        raw_size: Option<String>,
        #[arg(long, value_enum)]
        detector: Option<DetectorKind>,
        /// Detections CSV replayed by the file detector.
        #[arg(long)]
        detections_file: Option<PathBuf>,
        /// Ground truth for the mock detector (default: <input>/gt.csv).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// JSON run configuration; flags given here take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write annotated PPM frames.
        #[arg(long)]
        annotate: bool,
        /// Write intermediate motion-extraction images.
        #[arg(long)]
        debug_dumps: bool,
        /// Mock detector seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score predictions against ground truth.
    Eval {
        /// Predictions as detections JSONL or detections CSV.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        iou_threshold: f64,
        /// Directory for report.txt and pr_curve.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a synthetic sequence with ground truth.
    Synth {
        /// Scene spec JSON (defaults apply to omitted fields).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the frame count.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Print the version.
    Version,
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("size {s:?} is not WxH"))?;
    Ok((w.trim().parse()?, h.trim().parse()?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TINYTRACK_LOG", "warn")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            input,
            raw_size,
            detector,
            detections_file,
            gt,
            config,
            out,
            annotate,
            debug_dumps,
            seed,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::from_json_file(p)?,
                None => RunConfig::default(),
            };
            if let Some(path) = input {
                cfg.input = Some(match raw_size.as_deref().map(parse_size).transpose()? {
                    Some((width, height)) => InputSource::Raw {
                        path,
                        width,
                        height,
                    },
                    None => InputSource::Directory { path },
                });
            } else if raw_size.is_some() {
                bail!("--raw-size needs --input");
            }
            match detector {
                Some(DetectorKind::File) => {
                    let path = detections_file
                        .context("--detector file needs --detections-file")?;
                    cfg.detector = DetectorChoice::File { path };
                }
                Some(DetectorKind::Mock) => {
                    let config = match &cfg.detector {
                        DetectorChoice::Mock { config, .. } => config.clone(),
                        _ => MockConfig::default(),
                    };
                    cfg.detector = DetectorChoice::Mock {
                        ground_truth: gt.clone(),
                        config,
                    };
                }
                None => {
                    if let Some(path) = detections_file {
                        cfg.detector = DetectorChoice::File { path };
                    }
                }
            }
            if let (Some(g), DetectorChoice::Mock { ground_truth, .. }) = (gt, &mut cfg.detector) {
                *ground_truth = Some(g);
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            cfg.annotate |= annotate;
            cfg.debug_dumps |= debug_dumps;
            if seed.is_some() {
                cfg.seed = seed;
            }
            let summary = run_command(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval {
            pred,
            gt,
            iou_threshold,
            out,
        } => {
            let report = eval_command(&pred, &gt, iou_threshold, out.as_deref())?;
            print!("{}", report.to_text());
        }
        Command::Synth {
            spec,
            out,
            seed,
            frames,
        } => {
            let mut s = match &spec {
                Some(p) => read_scene_spec(p)?,
                None => SceneSpec::default(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(n) = frames {
                s.frame_count = n;
            }
            let n = synth_command(&s, &out)?;
            println!("wrote {n} frames to {}", out.display());
        }
        Command::Version => println!("tinytrack {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(())
}
