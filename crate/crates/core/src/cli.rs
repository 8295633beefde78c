//! Command implementations behind the `stif` binary.
//!
//! Scene directories hold one sub-directory per scene (`scene_0000`, ...),
//! each with `detections.jsonl` and `ground_truth.jsonl`. Track outputs
//! mirror that layout with `tracks.jsonl`. Every command writes a
//! `manifest.json` next to its outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, RunManifest, SCHEMA_VERSION};
use crate::metrics::{evaluate_tracks, EvalConfig, MetricsReport};
use crate::net::{AssocNet, FrameInput, NetConfig};
use crate::scene::{DetectionFrame, GroundTruthFrame, TrackFrame};
use crate::sim::{generate_set, Scenario, ScenarioConfig};
use crate::tracker::{track_sequence, AppearanceTracker, GreedyBevTracker, TrackerConfig};
use crate::train::{fit, Checkpoint, TrainConfig};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "STIF_THREADS";

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "stif", version, about = "Spatial-temporal association for 3D multi-object tracking")]
pub struct Cli {
    /// Progress messages on stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Directory for the scene subdirectories.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the association network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training scene directory.
        #[arg(long)]
        scenes: Option<PathBuf>,
        /// Held-out scene directory for per-epoch validation.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory for checkpoints and training logs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the tracker over a scene directory or a detection file.
    Track {
        #[command(flatten)]
        common: Common,
        /// Trained weights; required by the learned method.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Scene directory or detection file.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Track directory, or a file when the input is a file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score tracks against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Scene directory or ground-truth file.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Track directory or file, paired with the ground truth by scene name.
        #[arg(long)]
        tracks: Option<PathBuf>,
        /// Directory for metrics.json and metrics.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready CSV dumps: BEV paths, affinity heatmaps, loss curves.
    Report {
        #[command(flatten)]
        common: Common,
        /// Track file or directory.
        #[arg(long)]
        tracks: Option<PathBuf>,
        /// Scene directory or detection file for affinity dumps.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Weights for the affinity dumps.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory of a `train` run.
        #[arg(long)]
        train_dir: Option<PathBuf>,
        /// Directory for the CSV files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Template for every scene; `n_objects` and `seed` are set per scene.
    pub scenario: ScenarioConfig,
    pub scenes: usize,
    /// Inclusive range of simultaneously live objects.
    pub n_objects: [usize; 2],
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            scenario: ScenarioConfig::default(),
            scenes: 4,
            n_objects: [6, 10],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackMethod {
    /// The association network (needs a checkpoint).
    #[default]
    Learned,
    /// Nearest BEV centre, no learning.
    GreedyBev,
    /// Appearance cosine similarity with Hungarian matching, no learning.
    Appearance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackRunConfig {
    pub method: TrackMethod,
    pub tracker: TrackerConfig,
    /// Gate of the greedy baseline, metres.
    pub greedy_gate: f64,
    /// Smallest accepted cosine similarity of the appearance baseline.
    pub min_cosine: f64,
}

impl Default for TrackRunConfig {
    fn default() -> Self {
        TrackRunConfig {
            method: TrackMethod::Learned,
            tracker: TrackerConfig::default(),
            greedy_gate: 2.0,
            min_cosine: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Consecutive frame pairs of the first scene whose affinities are dumped.
    pub affinity_pairs: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { affinity_pairs: 3 }
    }
}

/// Metrics file written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub schema_version: String,
    pub sequences: Vec<String>,
    pub report: MetricsReport,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => io::read_json(p),
        None => Ok(T::default()),
    }
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::invalid(format!("--{flag} is required")))
}

fn dump<T: Serialize>(cfg: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(cfg).map_err(|e| Error::invalid(e.to_string()))?;
    // A closed pipe (`| head`) is not an error.
    let _ = writeln!(std::io::stdout(), "{s}");
    Ok(())
}

/// Progress output on stderr, silent unless verbose.
pub struct Logger {
    verbose: bool,
}

impl Logger {
    pub fn new(verbose: bool) -> Self {
        Logger { verbose }
    }

    pub fn info(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Sets up the thread pool from `STIF_THREADS`, if present.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
    // A pool built earlier in the process (tests) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses arguments and runs one command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = write!(std::io::stdout(), "{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            return Err(Error::invalid(msg.trim_start_matches("error: ").trim_end()));
        }
    };
    init_threads()?;
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<()> {
    let log = Logger { verbose: cli.verbose };
    let started = Instant::now();
    match cli.command {
        Command::Simulate { common, out } => {
            let mut cfg: SimulateConfig = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if common.dump_config {
                return dump(&cfg);
            }
            let out = required(&out, "out")?;
            let written = simulate(&cfg, out, &log)?;
            write_manifest(out, "simulate", &cfg, Some(cfg.seed), vec![], written, started)
        }
        Command::Train {
            common,
            scenes,
            val,
            checkpoint,
            out,
        } => {
            let mut cfg: TrainRunConfig = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            if common.dump_config {
                return dump(&cfg);
            }
            let scenes = required(&scenes, "scenes")?;
            let out = required(&out, "out")?;
            let mut inputs = vec![scenes.to_path_buf()];
            inputs.extend(val.iter().cloned());
            inputs.extend(checkpoint.iter().cloned());
            let written = train(&cfg, scenes, val.as_deref(), checkpoint.as_deref(), out, &log)?;
            write_manifest(out, "train", &cfg, Some(cfg.train.seed), inputs, written, started)
        }
        Command::Track {
            common,
            checkpoint,
            input,
            out,
        } => {
            let cfg: TrackRunConfig = load_config(common.config.as_deref())?;
            if common.dump_config {
                return dump(&cfg);
            }
            let input = required(&input, "input")?;
            let out = required(&out, "out")?;
            let mut inputs = vec![input.to_path_buf()];
            inputs.extend(checkpoint.iter().cloned());
            let written = track(&cfg, checkpoint.as_deref(), input, out, &log)?;
            write_manifest(out, "track", &cfg, None, inputs, written, started)
        }
        Command::Eval { common, gt, tracks, out } => {
            let cfg: EvalConfig = load_config(common.config.as_deref())?;
            if common.dump_config {
                return dump(&cfg);
            }
            let gt = required(&gt, "gt")?;
            let tracks = required(&tracks, "tracks")?;
            let out = required(&out, "out")?;
            let written = eval(&cfg, gt, tracks, out, &log)?;
            write_manifest(
                out,
                "eval",
                &cfg,
                None,
                vec![gt.to_path_buf(), tracks.to_path_buf()],
                written,
                started,
            )
        }
        Command::Report {
            common,
            tracks,
            input,
            checkpoint,
            train_dir,
            out,
        } => {
            let cfg: ReportConfig = load_config(common.config.as_deref())?;
            if common.dump_config {
                return dump(&cfg);
            }
            let out = required(&out, "out")?;
            let inputs: Vec<PathBuf> = [&tracks, &input, &checkpoint, &train_dir]
                .into_iter()
                .flatten()
                .cloned()
                .collect();
            let written = report(
                &cfg,
                tracks.as_deref(),
                input.as_deref(),
                checkpoint.as_deref(),
                train_dir.as_deref(),
                out,
                &log,
            )?;
            write_manifest(out, "report", &cfg, None, inputs, written, started)
        }
    }
}

fn write_manifest<T: Serialize>(
    out: &Path,
    command: &str,
    cfg: &T,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
) -> Result<()> {
    let m = RunManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        command: command.to_string(),
        config: serde_json::to_value(cfg).map_err(|e| Error::invalid(e.to_string()))?,
        seed,
        inputs,
        outputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    io::write_json(&out.join(MANIFEST_FILE), &m)
}

fn scene_name(i: usize) -> String {
    format!("scene_{i:04}")
}

/// Generates and writes the scene set; returns the written files.
pub fn simulate(cfg: &SimulateConfig, out: &Path, log: &Logger) -> Result<Vec<PathBuf>> {
    let scenes = generate_set(&cfg.scenario, cfg.scenes, cfg.n_objects, cfg.seed)?;
    let mut written = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        let dir = out.join(scene_name(i));
        fs::create_dir_all(&dir)?;
        let meta = serde_json::json!({ "scenario": s.config });
        let d = dir.join(DETECTIONS_FILE);
        let g = dir.join(GROUND_TRUTH_FILE);
        io::write_detections(&d, &s.detections, meta.clone())?;
        io::write_ground_truth(&g, &s.ground_truth, meta)?;
        written.extend([d, g]);
        log.info(format!("wrote {}", dir.display()));
    }
    Ok(written)
}

/// Scene sub-directories in name order.
fn scene_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(DETECTIONS_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!("{} contains no scene directories", dir.display())));
    }
    Ok(dirs)
}

/// Reads every scene of a directory written by `simulate`.
pub fn read_scenes(dir: &Path) -> Result<Vec<Scenario>> {
    scene_dirs(dir)?
        .iter()
        .map(|d| {
            let det_path = d.join(DETECTIONS_FILE);
            let header = io::read_header(&det_path)?;
            let config = match header.meta.get("scenario") {
                Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Parse {
                    path: det_path.clone(),
                    line: 1,
                    msg: format!("scenario metadata: {e}"),
                })?,
                None => ScenarioConfig::default(),
            };
            let detections = io::read_detections(&det_path)?;
            let ground_truth = io::read_ground_truth(&d.join(GROUND_TRUTH_FILE))?;
            if ground_truth.len() != detections.len() {
                return Err(Error::invalid(format!(
                    "{}: {} ground-truth frames for {} detection frames",
                    d.display(),
                    ground_truth.len(),
                    detections.len()
                )));
            }
            Ok(Scenario {
                config,
                ground_truth,
                detections,
            })
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

fn write_loss_csv(path: &Path, steps: &[crate::train::StepLog]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "step",
        "epoch",
        "lr",
        "tracking",
        "consistency",
        "velocity",
        "attribute",
        "box_refine",
        "total",
        "grad_norm",
    ])
    .map_err(csv_err)?;
    for s in steps {
        let l = &s.loss;
        w.write_record([
            s.step.to_string(),
            s.epoch.to_string(),
            s.lr.to_string(),
            l.tracking.to_string(),
            l.consistency.to_string(),
            l.velocity.to_string(),
            l.attribute.to_string(),
            l.box_refine.to_string(),
            l.total.to_string(),
            s.grad_norm.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOSS_CSV: &str = "loss_curve.csv";
pub const EPOCHS_FILE: &str = "epochs.json";

pub fn train(
    cfg: &TrainRunConfig,
    scenes: &Path,
    val: Option<&Path>,
    resume: Option<&Path>,
    out: &Path,
    log: &Logger,
) -> Result<Vec<PathBuf>> {
    let train_scenes = read_scenes(scenes)?;
    let val_scenes = match val {
        Some(v) => read_scenes(v)?,
        None => Vec::new(),
    };
    let resume = resume.map(io::load_checkpoint).transpose()?;
    fs::create_dir_all(out)?;
    log.info(format!(
        "training on {} scenes, validating on {}",
        train_scenes.len(),
        val_scenes.len()
    ));
    let res = fit(&cfg.train, &cfg.net, &train_scenes, &val_scenes, resume.as_ref(), |s| {
        if s.step % 50 == 0 {
            log.info(format!(
                "step {} epoch {} loss {:.4} (tracking {:.4})",
                s.step, s.epoch, s.loss.total, s.loss.tracking
            ));
        }
    })?;
    let last = out.join(LAST_CHECKPOINT);
    let best = out.join(BEST_CHECKPOINT);
    let loss = out.join(LOSS_CSV);
    let epochs = out.join(EPOCHS_FILE);
    io::save_checkpoint(&last, &res.last)?;
    io::save_checkpoint(&best, &res.best)?;
    write_loss_csv(&loss, &res.steps)?;
    io::write_json(
        &epochs,
        &serde_json::json!({ "schema_version": SCHEMA_VERSION, "epochs": res.epochs }),
    )?;
    Ok(vec![last, best, loss, epochs])
}

/// `(name, detection frames)` of a scene directory or a single detection file.
fn detection_inputs(input: &Path) -> Result<Vec<(String, Vec<DetectionFrame>)>> {
    if input.is_dir() {
        scene_dirs(input)?
            .into_iter()
            .map(|d| {
                let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((name, io::read_detections(&d.join(DETECTIONS_FILE))?))
            })
            .collect()
    } else {
        Ok(vec![(String::new(), io::read_detections(input)?)])
    }
}

pub fn track(cfg: &TrackRunConfig, checkpoint: Option<&Path>, input: &Path, out: &Path, log: &Logger) -> Result<Vec<PathBuf>> {
    cfg.tracker.validate()?;
    let net = match cfg.method {
        TrackMethod::Learned => {
            let ck = io::load_checkpoint(required(&checkpoint.map(Path::to_path_buf), "checkpoint")?)?;
            Some(ck.to_net()?)
        }
        TrackMethod::GreedyBev | TrackMethod::Appearance => None,
    };
    let inputs = detection_inputs(input)?;
    let meta = serde_json::json!({ "tracker": cfg });
    let mut written = Vec::new();
    for (name, frames) in &inputs {
        let tracks = match &net {
            Some(n) => track_sequence(n, &cfg.tracker, frames)?,
            None if cfg.method == TrackMethod::GreedyBev => {
                let mut g = GreedyBevTracker::new(cfg.greedy_gate, cfg.tracker.max_missed, cfg.tracker.min_confidence);
                frames.iter().map(|f| g.step(f)).collect()
            }
            None => {
                let mut a = AppearanceTracker::new(cfg.min_cosine, cfg.tracker.max_missed, cfg.tracker.min_confidence);
                frames.iter().map(|f| a.step(f)).collect::<Result<_>>()?
            }
        };
        let dir = out.join(name);
        fs::create_dir_all(&dir)?;
        let path = dir.join(TRACKS_FILE);
        io::write_tracks(&path, &tracks, meta.clone())?;
        log.info(format!("wrote {}", path.display()));
        written.push(path);
    }
    Ok(written)
}

/// Pairs ground-truth and track sequences by scene name (or a single file each).
fn load_pairs(gt: &Path, tracks: &Path) -> Result<Vec<(String, Vec<GroundTruthFrame>, Vec<TrackFrame>)>> {
    if gt.is_dir() {
        if !tracks.is_dir() {
            return Err(Error::invalid("--gt is a directory, so --tracks must be one too"));
        }
        scene_dirs(gt)?
            .into_iter()
            .map(|d| {
                let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let g = io::read_ground_truth(&d.join(GROUND_TRUTH_FILE))?;
                let t = io::read_tracks(&tracks.join(&name).join(TRACKS_FILE))?;
                Ok((name, g, t))
            })
            .collect()
    } else {
        let g = if gt.is_file() { io::read_ground_truth(gt)? } else { Vec::new() };
        let t = if tracks.is_dir() {
            io::read_tracks(&tracks.join(TRACKS_FILE))?
        } else {
            io::read_tracks(tracks)?
        };
        Ok(vec![(String::new(), g, t)])
    }
}

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

pub fn eval(cfg: &EvalConfig, gt: &Path, tracks: &Path, out: &Path, log: &Logger) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let pairs = load_pairs(gt, tracks)?;
    let seqs: Vec<(&[GroundTruthFrame], &[TrackFrame])> =
        pairs.iter().map(|(_, g, t)| (g.as_slice(), t.as_slice())).collect();
    let report = evaluate_tracks(&seqs, cfg)?;
    fs::create_dir_all(out)?;
    let json = out.join(METRICS_JSON);
    let csv_path = out.join(METRICS_CSV);
    io::write_json(
        &json,
        &MetricsFile {
            schema_version: SCHEMA_VERSION.to_string(),
            sequences: pairs.iter().map(|p| p.0.clone()).collect(),
            report: report.clone(),
        },
    )?;
    let c = &report.clear;
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["metric", "value"]).map_err(csv_err)?;
    let rows: [(&str, String); 10] = [
        ("amota", report.amota.to_string()),
        ("amotp", report.amotp.to_string()),
        ("mota", c.mota.to_string()),
        ("motp", c.motp.to_string()),
        ("num_gt", c.num_gt.to_string()),
        ("matches", c.matches.to_string()),
        ("misses", c.misses.to_string()),
        ("false_positives", c.false_positives.to_string()),
        ("id_switches", c.id_switches.to_string()),
        ("sequences", pairs.len().to_string()),
    ];
    for (k, v) in rows {
        w.write_record([k, v.as_str()]).map_err(csv_err)?;
    }
    w.flush()?;
    log.info(format!("MOTA {:.4} AMOTA {:.4} IDS {}", c.mota, report.amota, c.id_switches));
    Ok(vec![json, csv_path])
}

pub const BEV_CSV: &str = "bev_paths.csv";
pub const AFFINITY_CSV: &str = "affinity.csv";

fn track_inputs(tracks: &Path) -> Result<Vec<(String, Vec<TrackFrame>)>> {
    if tracks.is_dir() {
        let mut dirs: Vec<PathBuf> = fs::read_dir(tracks)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(TRACKS_FILE).is_file())
            .collect();
        dirs.sort();
        let mut out: Vec<(String, Vec<TrackFrame>)> = dirs
            .into_iter()
            .map(|d| {
                let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((name, io::read_tracks(&d.join(TRACKS_FILE))?))
            })
            .collect::<Result<_>>()?;
        if tracks.join(TRACKS_FILE).is_file() {
            out.insert(0, (String::new(), io::read_tracks(&tracks.join(TRACKS_FILE))?));
        }
        Ok(out)
    } else {
        Ok(vec![(String::new(), io::read_tracks(tracks)?)])
    }
}

pub fn report(
    cfg: &ReportConfig,
    tracks: Option<&Path>,
    input: Option<&Path>,
    checkpoint: Option<&Path>,
    train_dir: Option<&Path>,
    out: &Path,
    log: &Logger,
) -> Result<Vec<PathBuf>> {
    if tracks.is_none() && train_dir.is_none() && (input.is_none() || checkpoint.is_none()) {
        return Err(Error::invalid(
            "report needs --tracks, --train-dir, or --input together with --checkpoint",
        ));
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    if let Some(t) = tracks {
        let path = out.join(BEV_CSV);
        let mut w = csv_writer(&path)?;
        w.write_record(["sequence", "track_id", "frame_index", "timestamp", "x", "y", "yaw"])
            .map_err(csv_err)?;
        for (name, frames) in track_inputs(t)? {
            let mut rows: Vec<(u64, usize, f64, f64, f64, f64)> = frames
                .iter()
                .flat_map(|f| {
                    f.objects
                        .iter()
                        .map(move |o| (o.track_id, f.frame_index, f.timestamp, o.box3d.x, o.box3d.y, o.box3d.yaw))
                })
                .collect();
            rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
            for (id, fi, ts, x, y, yaw) in rows {
                w.write_record([
                    name.clone(),
                    id.to_string(),
                    fi.to_string(),
                    ts.to_string(),
                    x.to_string(),
                    y.to_string(),
                    yaw.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        written.push(path);
    }
    if let (Some(inp), Some(ck)) = (input, checkpoint) {
        let net = io::load_checkpoint(ck)?.to_net()?;
        let (name, frames) = detection_inputs(inp)?.into_iter().next().expect("at least one input");
        let path = out.join(AFFINITY_CSV);
        let mut w = csv_writer(&path)?;
        w.write_record(["sequence", "frame_index", "prev_frame_index", "row", "col", "logit", "association"])
            .map_err(csv_err)?;
        let mut dumped = 0;
        for pair in frames.windows(2) {
            if dumped == cfg.affinity_pairs {
                break;
            }
            let (p, c) = (&pair[0], &pair[1]);
            if p.detections.is_empty() || c.detections.is_empty() {
                continue;
            }
            let cfg_n = net.config();
            let fc = net.encode_frame(&FrameInput::from_detections(&c.detections, c.detections.len(), c.timestamp, cfg_n)?)?;
            let fp = net.encode_frame(&FrameInput::from_detections(&p.detections, p.detections.len(), p.timestamp, cfg_n)?)?;
            let o = net.associate(&fc.spatial, &fc.valid_mask, &fp.spatial, &fp.valid_mask, c.timestamp - p.timestamp)?;
            let (nr, nc) = (o.association.rows(), o.association.cols());
            for i in 0..nr {
                for j in 0..nc {
                    w.write_record([
                        name.clone(),
                        c.frame_index.to_string(),
                        p.frame_index.to_string(),
                        i.to_string(),
                        j.to_string(),
                        o.affinity.logits.get(i, j).to_string(),
                        o.association.get(i, j).to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            dumped += 1;
        }
        w.flush()?;
        written.push(path);
    }
    if let Some(td) = train_dir {
        let src = td.join(LOSS_CSV);
        let dst = out.join(LOSS_CSV);
        fs::copy(&src, &dst).map_err(|e| Error::invalid(format!("{}: {e}", src.display())))?;
        written.push(dst);
    }
    log.info(format!("wrote {} report files", written.len()));
    Ok(written)
}

/// Builds a zero-weight checkpoint (every tensor zero) for smoke runs.
pub fn zero_checkpoint(net: &NetConfig) -> Result<Checkpoint> {
    let mut n = AssocNet::new(net.clone())?;
    n.params_mut().zero_all();
    Ok(Checkpoint::from_net(&n, 0, 0, Checkpoint::initial(net, 0)?.rng, None))
}
