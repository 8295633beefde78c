use std::fs;
use std::path::Path;
use std::process::Command;

use stif::cli::{self, MetricsFile, SimulateConfig, TrackRunConfig, TrainRunConfig};
use stif::io::{self, read_json, save_checkpoint};
use stif::net::NetConfig;
use stif::scene::{TrackFrame, TrackedObject};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stif"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_net() -> NetConfig {
    NetConfig {
        d: 16,
        heads: 2,
        ffn_hidden: 16,
        point_hidden: 8,
        head_hidden: 8,
        affinity_hidden: 4,
        ..Default::default()
    }
}

fn simulate(dir: &Path, cfg: &SimulateConfig) {
    let cfg_path = dir.join("sim.json");
    io::write_json(&cfg_path, cfg).unwrap();
    cli::run(["stif", "simulate", "--config", p(&cfg_path), "--out", p(&dir.join("scenes"))]).unwrap();
}

fn metrics(dir: &Path) -> MetricsFile {
    read_json(&dir.join(cli::METRICS_JSON)).unwrap()
}

#[test]
fn identical_ground_truth_and_tracks_score_perfectly() {
    let d = tempfile::tempdir().unwrap();
    simulate(
        d.path(),
        &SimulateConfig {
            scenes: 1,
            ..Default::default()
        },
    );
    let gt_path = d.path().join("scenes/scene_0000").join(cli::GROUND_TRUTH_FILE);
    let gt = io::read_ground_truth(&gt_path).unwrap();
    let tracks: Vec<TrackFrame> = gt
        .iter()
        .map(|f| TrackFrame {
            frame_index: f.frame_index,
            timestamp: f.timestamp,
            objects: f
                .objects
                .iter()
                .map(|o| TrackedObject {
                    track_id: o.id,
                    box3d: o.box3d,
                    box2d: o.box2d,
                    category: o.category,
                    confidence: 1.0,
                    velocity: o.velocity,
                    attribute: o.attribute,
                })
                .collect(),
        })
        .collect();
    let tr_path = d.path().join("tracks.jsonl");
    io::write_tracks(&tr_path, &tracks, serde_json::Value::Null).unwrap();
    let out = d.path().join("eval");
    cli::run(["stif", "eval", "--gt", p(&gt_path), "--tracks", p(&tr_path), "--out", p(&out)]).unwrap();
    let m = metrics(&out);
    assert_eq!(m.schema_version, io::SCHEMA_VERSION);
    assert_eq!(m.report.clear.mota, 1.0);
    assert_eq!(m.report.clear.motp, 0.0);
    assert!(fs::read_to_string(out.join(cli::METRICS_CSV)).unwrap().contains("mota,1"));
}

#[test]
fn noiseless_round_trip_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    simulate(
        d.path(),
        &SimulateConfig {
            scenario: stif::sim::ScenarioConfig::default().noiseless(),
            scenes: 3,
            ..Default::default()
        },
    );
    // Noiseless appearance vectors are exact, so a strict cosine gate is safe.
    let track_cfg = d.path().join("track.json");
    io::write_json(
        &track_cfg,
        &TrackRunConfig {
            method: cli::TrackMethod::Appearance,
            min_cosine: 0.9,
            ..Default::default()
        },
    )
    .unwrap();
    let scenes = d.path().join("scenes");
    let tracks = d.path().join("tracks");
    let out = d.path().join("eval");
    cli::run(["stif", "track", "--config", p(&track_cfg), "--input", p(&scenes), "--out", p(&tracks)]).unwrap();
    cli::run(["stif", "eval", "--gt", p(&scenes), "--tracks", p(&tracks), "--out", p(&out)]).unwrap();
    let m = metrics(&out);
    assert_eq!(m.sequences.len(), 3);
    assert_eq!(m.report.clear.mota, 1.0);
    assert_eq!(m.report.clear.motp, 0.0);
}

#[test]
fn zero_checkpoint_tracks_with_finite_metrics() {
    let d = tempfile::tempdir().unwrap();
    simulate(
        d.path(),
        &SimulateConfig {
            scenes: 2,
            ..Default::default()
        },
    );
    let ck = d.path().join("zero.ckpt");
    save_checkpoint(&ck, &cli::zero_checkpoint(&small_net()).unwrap()).unwrap();
    let scenes = d.path().join("scenes");
    let tracks = d.path().join("tracks");
    let out = d.path().join("eval");
    cli::run(["stif", "track", "--checkpoint", p(&ck), "--input", p(&scenes), "--out", p(&tracks)]).unwrap();
    cli::run(["stif", "eval", "--gt", p(&scenes), "--tracks", p(&tracks), "--out", p(&out)]).unwrap();
    let r = metrics(&out).report;
    for v in [r.clear.mota, r.clear.motp, r.amota, r.amotp] {
        assert!(v.is_finite());
    }
}

#[test]
fn train_track_report_pipeline() {
    let d = tempfile::tempdir().unwrap();
    simulate(
        d.path(),
        &SimulateConfig {
            scenario: stif::sim::ScenarioConfig {
                n_frames: 12,
                ..Default::default()
            },
            scenes: 2,
            ..Default::default()
        },
    );
    let cfg = d.path().join("train.json");
    let mut tc = TrainRunConfig {
        net: small_net(),
        ..Default::default()
    };
    tc.train.epochs = 1;
    tc.train.steps_per_epoch = 3;
    tc.train.batch_pairs = 2;
    io::write_json(&cfg, &tc).unwrap();
    let scenes = d.path().join("scenes");
    let run = d.path().join("run");
    cli::run(["stif", "train", "--config", p(&cfg), "--scenes", p(&scenes), "--val", p(&scenes), "--out", p(&run)]).unwrap();
    for f in [cli::LAST_CHECKPOINT, cli::BEST_CHECKPOINT, cli::LOSS_CSV, cli::EPOCHS_FILE, cli::MANIFEST_FILE] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let loss = fs::read_to_string(run.join(cli::LOSS_CSV)).unwrap();
    assert_eq!(loss.lines().count(), 4);
    let manifest: io::RunManifest = read_json(&run.join(cli::MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.command, "train");
    // The manifest's configuration reproduces the run's configuration.
    let again: TrainRunConfig = serde_json::from_value(manifest.config).unwrap();
    assert_eq!(again, tc);

    let ck = run.join(cli::BEST_CHECKPOINT);
    let tracks = d.path().join("tracks");
    cli::run(["stif", "track", "--checkpoint", p(&ck), "--input", p(&scenes), "--out", p(&tracks)]).unwrap();
    let rep = d.path().join("report");
    cli::run([
        "stif", "report", "--tracks", p(&tracks), "--input", p(&scenes), "--checkpoint", p(&ck), "--train-dir", p(&run), "--out",
        p(&rep),
    ])
    .unwrap();
    for f in [cli::BEV_CSV, cli::AFFINITY_CSV, cli::LOSS_CSV] {
        let text = fs::read_to_string(rep.join(f)).unwrap();
        assert!(text.lines().count() > 1, "{f} is empty");
    }
}

#[test]
fn dump_config_emits_full_defaults() {
    for cmd in ["simulate", "train", "track", "eval", "report"] {
        let out = bin().args([cmd, "--dump-config"]).output().unwrap();
        assert!(out.status.success(), "{cmd}");
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(v.is_object(), "{cmd}");
    }
    let out = bin().args(["train", "--dump-config", "--seed", "17"]).output().unwrap();
    let cfg: TrainRunConfig = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg.train.seed, 17);
    assert_eq!(cfg.net, NetConfig::default());
}

#[test]
fn malformed_input_exits_2_with_line_number() {
    let d = tempfile::tempdir().unwrap();
    simulate(
        d.path(),
        &SimulateConfig {
            scenes: 1,
            ..Default::default()
        },
    );
    let good = d.path().join("scenes/scene_0000").join(cli::DETECTIONS_FILE);
    let text = fs::read_to_string(&good).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[4] = "{\"timestamp\": 2.0, \"frame_index\": 4, \"objects\": [oops]}";
    let bad = d.path().join("bad.jsonl");
    fs::write(&bad, lines.join("\n")).unwrap();
    fs::write(d.path().join("greedy.json"), "{\"method\": \"greedy_bev\"}").unwrap();
    let out = bin()
        .args(["track", "--config", p(&d.path().join("greedy.json")), "--input", p(&bad), "--out", p(&d.path().join("t"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.jsonl:5:"), "{err}");

    // A config with an unknown field names its line.
    fs::write(d.path().join("c.json"), "{\n  \"scenes\": 2,\n  \"bogus\": 1\n}").unwrap();
    let out = bin()
        .args(["simulate", "--config", p(&d.path().join("c.json")), "--out", p(&d.path().join("s"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c.json:3:"));

    // Unknown major schema version.
    let v2 = text.replacen("\"schema_version\":\"1.0\"", "\"schema_version\":\"2.0\"", 1);
    fs::write(d.path().join("v2.jsonl"), v2).unwrap();
    let out = bin()
        .args(["track", "--config", p(&d.path().join("greedy.json")), "--input", p(&d.path().join("v2.jsonl"))])
        .args(["--out", p(&d.path().join("t"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
}

#[test]
fn numeric_failure_exits_3() {
    let d = tempfile::tempdir().unwrap();
    simulate(
        d.path(),
        &SimulateConfig {
            scenes: 1,
            ..Default::default()
        },
    );
    // Weights large enough to overflow the first matrix products.
    let mut ck = cli::zero_checkpoint(&small_net()).unwrap();
    for (_, t) in ck.weights.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 1e200);
    }
    let path = d.path().join("huge.ckpt");
    save_checkpoint(&path, &ck).unwrap();
    let out = bin()
        .args(["track", "--checkpoint", p(&path), "--input", p(&d.path().join("scenes"))])
        .args(["--out", p(&d.path().join("t"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn thread_cap_is_validated() {
    let d = tempfile::tempdir().unwrap();
    let out = bin()
        .env("STIF_THREADS", "none")
        .args(["simulate", "--out", p(d.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .env("STIF_THREADS", "1")
        .args(["simulate", "--out", p(d.path())])
        .output()
        .unwrap();
    assert!(out.status.success());
}
