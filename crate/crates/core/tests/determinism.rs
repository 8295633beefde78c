use std::fs;
use std::path::Path;

use stif::cli;
use stif::io::checkpoint_to_bytes;
use stif::net::NetConfig;
use stif::sim::{generate_set, ScenarioConfig};
use stif::tracker::{track_sequence, TrackerConfig};
use stif::train::{fit, TrainConfig};

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

fn small_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        steps_per_epoch: 4,
        batch_pairs: 2,
        learning_rate: 1e-3,
        lr_drop_epochs: vec![2],
        warmup_steps: 3,
        validate: false,
        seed: 5,
        ..Default::default()
    }
}

fn scenes() -> Vec<stif::sim::Scenario> {
    let tmpl = ScenarioConfig {
        n_frames: 12,
        ..Default::default()
    };
    generate_set(&tmpl, 3, [3, 5], 9).unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != cli::MANIFEST_FILE {
                // Manifests hold wall-clock time and paths.
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn simulation_is_seed_deterministic() {
    assert_eq!(scenes(), scenes());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        cli::run(["stif", "simulate", "--seed", "4", "--out", d.path().to_str().unwrap()]).unwrap();
    }
    let (ba, bb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert!(!ba.is_empty());
    assert_eq!(ba, bb);
    let c = tempfile::tempdir().unwrap();
    cli::run(["stif", "simulate", "--seed", "5", "--out", c.path().to_str().unwrap()]).unwrap();
    assert_ne!(ba, dir_bytes(c.path()));
}

pub fn training_and_tracking_are_bit_exact() {
    let s = scenes();
    let net = small_net();
    let a = fit(&small_train(2), &net, &s, &[], None, |_| {}).unwrap();
    let b = fit(&small_train(2), &net, &s, &[], None, |_| {}).unwrap();
    assert_eq!(checkpoint_to_bytes(&a.last).unwrap(), checkpoint_to_bytes(&b.last).unwrap());
    assert_eq!(a.steps, b.steps);
    let na = a.last.to_net().unwrap();
    let nb = b.last.to_net().unwrap();
    let cfg = TrackerConfig::default();
    for sc in &s {
        assert_eq!(
            track_sequence(&na, &cfg, &sc.detections).unwrap(),
            track_sequence(&nb, &cfg, &sc.detections).unwrap()
        );
    }
}

pub fn resumed_training_matches_uninterrupted_run() {
    let s = scenes();
    let net = small_net();
    let straight = fit(&small_train(2), &net, &s, &[], None, |_| {}).unwrap();
    let first = fit(&small_train(1), &net, &s, &[], None, |_| {}).unwrap();
    // Through the file format, as a resumed command would see it.
    let bytes = checkpoint_to_bytes(&first.last).unwrap();
    let restored = stif::io::checkpoint_from_bytes(&bytes).unwrap();
    let resumed = fit(&small_train(2), &net, &s, &[], Some(&restored), |_| {}).unwrap();
    assert_eq!(resumed.last, straight.last);
    assert_eq!(
        checkpoint_to_bytes(&resumed.last).unwrap(),
        checkpoint_to_bytes(&straight.last).unwrap()
    );
    let tail: Vec<_> = straight.steps[first.steps.len()..].to_vec();
    assert_eq!(resumed.steps, tail);
}

pub fn thread_count_does_not_change_results() {
    let s = scenes();
    let net = small_net();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| fit(&small_train(1), &net, &s, &[], None, |_| {}).unwrap())
    };
    assert_eq!(run(1).last, run(3).last);
}

#[cfg(test)]
mod cases {
    #[test]
    fn simulation_is_seed_deterministic() {
        super::simulation_is_seed_deterministic()
    }

    #[test]
    fn training_and_tracking_are_bit_exact() {
        super::training_and_tracking_are_bit_exact()
    }

    #[test]
    fn resumed_training_matches_uninterrupted_run() {
        super::resumed_training_matches_uninterrupted_run()
    }

    #[test]
    fn thread_count_does_not_change_results() {
        super::thread_count_does_not_change_results()
    }
}
