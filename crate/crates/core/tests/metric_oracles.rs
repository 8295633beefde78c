use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stif::geometry::{Box2D, Box3D};
use stif::metrics::{amota_amotp, evaluate_tracks, EvalConfig};
use stif::scene::{Attribute, Category, GroundTruthFrame, GroundTruthObject, TrackFrame, TrackedObject};

const FRAMES: usize = 10;

fn bx(x: f64, y: f64) -> Box3D {
    Box3D::new(x, y, 0.8, 4.0, 1.8, 1.5, 0.0).unwrap()
}

fn b2() -> Box2D {
    Box2D::new(800.0, 450.0, 50.0, 40.0).unwrap()
}

fn gt_frame(f: usize, objs: &[(u64, f64, f64)]) -> GroundTruthFrame {
    GroundTruthFrame {
        frame_index: f,
        timestamp: f as f64 * 0.5,
        objects: objs
            .iter()
            .map(|&(id, x, y)| GroundTruthObject {
                id,
                box3d: bx(x, y),
                box2d: b2(),
                velocity: [0.0; 3],
                attribute: Attribute::Moving,
                category: Category::Car,
            })
            .collect(),
    }
}

fn track_frame(f: usize, objs: &[(u64, f64, f64, f64)]) -> TrackFrame {
    TrackFrame {
        frame_index: f,
        timestamp: f as f64 * 0.5,
        objects: objs
            .iter()
            .map(|&(id, x, y, confidence)| TrackedObject {
                track_id: id,
                box3d: bx(x, y),
                box2d: b2(),
                category: Category::Car,
                confidence,
                velocity: [0.0; 3],
                attribute: Attribute::Moving,
            })
            .collect(),
    }
}

fn report(gt: &[GroundTruthFrame], tr: &[TrackFrame]) -> stif::metrics::MetricsReport {
    evaluate_tracks(&[(gt, tr)], &EvalConfig::default()).unwrap()
}

pub fn one_miss_in_ten_frames() {
    let gt: Vec<_> = (0..FRAMES).map(|f| gt_frame(f, &[(1, f as f64, 0.0)])).collect();
    let tr: Vec<_> = (0..FRAMES)
        .map(|f| if f == 4 { track_frame(f, &[]) } else { track_frame(f, &[(5, f as f64, 0.0, 0.9)]) })
        .collect();
    let c = report(&gt, &tr).clear;
    assert_eq!((c.num_gt, c.misses, c.false_positives, c.id_switches), (10, 1, 0, 0));
    assert!((c.mota - 0.9).abs() < 1e-12);
}

pub fn swapped_identities_count_two_switches() {
    let gt: Vec<_> = (0..FRAMES).map(|f| gt_frame(f, &[(1, f as f64, 0.0), (2, f as f64, 10.0)])).collect();
    let tr: Vec<_> = (0..FRAMES)
        .map(|f| {
            let (a, b) = if f < 5 { (11, 12) } else { (12, 11) };
            track_frame(f, &[(a, f as f64, 0.0, 0.9), (b, f as f64, 10.0, 0.9)])
        })
        .collect();
    let c = report(&gt, &tr).clear;
    assert_eq!(c.id_switches, 2);
    assert_eq!((c.misses, c.false_positives), (0, 0));
    assert!((c.mota - 0.9).abs() < 1e-12);
}

pub fn perfect_input() {
    let gt: Vec<_> = (0..FRAMES).map(|f| gt_frame(f, &[(1, 0.0, f as f64), (2, 30.0, -(f as f64))])).collect();
    let tr: Vec<_> = (0..FRAMES)
        .map(|f| track_frame(f, &[(1, 0.0, f as f64, 1.0), (2, 30.0, -(f as f64), 1.0)]))
        .collect();
    let r = report(&gt, &tr);
    assert_eq!(r.clear.mota, 1.0);
    assert_eq!(r.clear.motp, 0.0);
    assert_eq!(r.amota, 1.0);
    assert_eq!(r.amotp, 0.0);
}

/// Toy sequence where every hypothesis is either near exactly one
/// ground-truth object or far from all of them, so matching needs no
/// assignment solver.
struct Toy {
    gt: Vec<GroundTruthFrame>,
    tr: Vec<TrackFrame>,
    /// `(frame, track id, gt id or None, offset, confidence)`
    hyps: Vec<(usize, u64, Option<u64>, f64, f64)>,
}

fn toy(seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = [0.0, 20.0, 40.0];
    let mut gt = Vec::new();
    let mut tr = Vec::new();
    let mut hyps = Vec::new();
    for f in 0..FRAMES {
        let objs: Vec<(u64, f64, f64)> = xs.iter().enumerate().map(|(k, &x)| (k as u64, x, f as f64)).collect();
        gt.push(gt_frame(f, &objs));
        let mut t = Vec::new();
        for &(gid, x, y) in &objs {
            if rng.random_bool(0.15) {
                continue;
            }
            // Object 2 is handed to a new track half way through.
            let tid = if gid == 2 && f >= 6 { 9 } else { 100 + gid };
            let off = rng.random_range(0.0..1.5);
            let conf = (rng.random_range(1..100) as f64) / 100.0;
            t.push((tid, x + off, y, conf));
            hyps.push((f, tid, Some(gid), off, conf));
        }
        if rng.random_bool(0.4) {
            let conf = (rng.random_range(1..100) as f64) / 100.0;
            t.push((500 + f as u64, 100.0, 0.0, conf));
            hyps.push((f, 500 + f as u64, None, 0.0, conf));
        }
        tr.push(track_frame(f, &t));
    }
    Toy { gt, tr, hyps }
}

/// Counts at one cutoff, straight from the toy's construction.
fn counts_at(t: &Toy, cutoff: f64) -> (usize, usize, usize, usize, f64) {
    let p = t.gt.iter().map(|g| g.objects.len()).sum::<usize>();
    let (mut tp, mut fp, mut ids, mut dist) = (0, 0, 0, 0.0);
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    for f in 0..FRAMES {
        for &(hf, tid, gid, off, conf) in &t.hyps {
            if hf != f || conf < cutoff {
                continue;
            }
            match gid {
                Some(g) => {
                    tp += 1;
                    dist += off;
                    if last.insert(g, tid).is_some_and(|prev| prev != tid) {
                        ids += 1;
                    }
                }
                None => fp += 1,
            }
        }
    }
    (p, tp, fp, ids, dist)
}

/// Every distinct confidence evaluated; for each recall target the highest
/// cutoff that reaches it.
fn brute_force_amota(t: &Toy, thresholds: &[f64], match_dist: f64) -> (f64, f64) {
    let mut cutoffs: Vec<f64> = t.hyps.iter().map(|h| h.4).collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();
    let all: Vec<(f64, (usize, usize, usize, usize, f64))> = cutoffs.iter().map(|&c| (c, counts_at(t, c))).collect();
    let (mut sa, mut sp) = (0.0, 0.0);
    for &r in thresholds {
        match all.iter().find(|(_, (p, tp, ..))| *tp as f64 / *p as f64 >= r) {
            Some(&(_, (p, tp, fp, ids, dist))) => {
                let p = p as f64;
                let fn_ = p - tp as f64;
                let m = 1.0 - ((ids + fp) as f64 + fn_ - (1.0 - r) * p) / (r * p);
                sa += m.clamp(0.0, 1.0);
                sp += dist / tp as f64;
            }
            None => sp += match_dist,
        }
    }
    let n = thresholds.len() as f64;
    (sa / n, sp / n)
}

pub fn amota_matches_brute_force_sweep() {
    let cfg = EvalConfig::default();
    for seed in 0..20 {
        let t = toy(seed);
        let a = amota_amotp(&[(&t.gt, &t.tr)], &cfg).unwrap();
        let (amota, amotp) = brute_force_amota(&t, &cfg.recall_thresholds, cfg.match_dist);
        assert!((a.amota - amota).abs() < 1e-9, "seed {seed}: {} vs {amota}", a.amota);
        assert!((a.amotp - amotp).abs() < 1e-9, "seed {seed}: {} vs {amotp}", a.amotp);
    }
}

pub fn amota_of_toy_is_nontrivial() {
    // Guards the oracle test against degenerate toys.
    let t = toy(3);
    let a = amota_amotp(&[(&t.gt, &t.tr)], &EvalConfig::default()).unwrap();
    assert!(a.amota > 0.1 && a.amota < 1.0, "{}", a.amota);
    assert!(a.amotp > 0.0 && a.amotp < 2.0);
}

#[cfg(test)]
mod cases {
    #[test]
    fn one_miss_in_ten_frames() {
        super::one_miss_in_ten_frames()
    }

    #[test]
    fn swapped_identities_count_two_switches() {
        super::swapped_identities_count_two_switches()
    }

    #[test]
    fn perfect_input() {
        super::perfect_input()
    }

    #[test]
    fn amota_matches_brute_force_sweep() {
        super::amota_matches_brute_force_sweep()
    }

    #[test]
    fn amota_of_toy_is_nontrivial() {
        super::amota_of_toy_is_nontrivial()
    }
}
