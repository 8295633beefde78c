use std::collections::BTreeMap;

use proptest::prelude::*;
use stif::autodiff::{Axis, Tape, Tensor};
use stif::geometry::{corners3d, normalize_angle, Box2D, Box3D};
use stif::losses::{temporal_consistency_loss, tracking_loss, ConsistencyTerm, GroundTruthAssociation};
use stif::metrics::{evaluate_tracks, EvalConfig};
use stif::net::{dual_softmax, AffinityVar};
use stif::scene::{Attribute, Category, GroundTruthFrame, GroundTruthObject, TrackFrame, TrackedObject};
use stif::tracker::hungarian;

fn box3d() -> impl Strategy<Value = Box3D> {
    (
        -50.0..50.0f64,
        -50.0..50.0f64,
        -2.0..2.0f64,
        0.3..6.0f64,
        0.3..3.0f64,
        0.3..3.0f64,
        -4.0..4.0f64,
    )
        .prop_map(|(x, y, z, l, w, h, yaw)| Box3D::new(x, y, z, l, w, h, yaw).unwrap())
}

fn matrix(n: usize, m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8.0..8.0f64, n * m)
}

fn boxes_tensor(b: &[Box3D]) -> Tensor {
    Tensor::matrix(b.len(), 7, b.iter().flat_map(|b| b.to_array()).collect()).unwrap()
}

/// Consistency loss of predicted against ground-truth boxes.
fn consistency(pc: &[Box3D], pp: &[Box3D], gc: &[Box3D], gp: &[Box3D]) -> f64 {
    let mut tape = Tape::new();
    let pred_cur = tape.constant(boxes_tensor(pc));
    let pred_prev = tape.constant(boxes_tensor(pp));
    let term = ConsistencyTerm {
        pred_cur,
        pred_prev,
        gt_cur: boxes_tensor(gc),
        gt_prev: boxes_tensor(gp),
    };
    let l = temporal_consistency_loss(&mut tape, &[term]).unwrap();
    tape.value(l).item()
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn corner_mean_is_the_centre(b in box3d()) {
        let c = corners3d(&b).unwrap();
        for (k, centre) in b.center().iter().enumerate() {
            let mean = c.iter().map(|p| p[k]).sum::<f64>() / 8.0;
            prop_assert!((mean - centre).abs() < 1e-12);
        }
    }

    #[test]
    fn corners_preserve_extents(b in box3d()) {
        let c = corners3d(&b).unwrap();
        let d = |i: usize, j: usize| ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2) + (c[i][2] - c[j][2]).powi(2)).sqrt();
        // The longest corner-to-corner distance is the box diagonal.
        let diag = (b.l * b.l + b.w * b.w + b.h * b.h).sqrt();
        let max = (0..8).flat_map(|i| (0..8).map(move |j| (i, j))).map(|(i, j)| d(i, j)).fold(0.0, f64::max);
        prop_assert!((max - diag).abs() < 1e-9);
    }

    #[test]
    fn angle_normalization_is_idempotent_and_bounded(a in -100.0..100.0f64) {
        let n = normalize_angle(a);
        prop_assert!(n > -std::f64::consts::PI - 1e-12 && n <= std::f64::consts::PI + 1e-12);
        prop_assert!((normalize_angle(n) - n).abs() < 1e-12);
        let turns = (a - n) / (2.0 * std::f64::consts::PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(x in matrix(4, 5), shift in -20.0..20.0f64) {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(4, 5, x.clone()).unwrap());
        let b = tape.constant(Tensor::matrix(4, 5, x.iter().map(|v| v + shift).collect()).unwrap());
        for axis in [Axis::Rows, Axis::Cols] {
            let sa = tape.softmax(a, axis, None).unwrap();
            let sb = tape.softmax(b, axis, None).unwrap();
            let (va, vb) = (tape.value(sa).clone(), tape.value(sb).clone());
            prop_assert!(va.max_abs_diff(&vb) < 1e-12);
            prop_assert!(va.data().iter().all(|p| (0.0..=1.0).contains(p)));
            let total: f64 = va.data().iter().sum();
            // Four rows of one, or five columns of one.
            prop_assert!((total - 4.0).abs() < 1e-9 || (total - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dual_softmax_is_a_probability_table(x in matrix(4, 5)) {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::matrix(4, 5, x).unwrap());
        let aff = AffinityVar { logits, valid_rows: vec![true; 4], valid_cols: vec![true; 5] };
        let p = dual_softmax(&mut tape, &aff).unwrap();
        let p = tape.value(p).clone();
        prop_assert!(p.data().iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
        prop_assert_eq!(p.get(3, 4), 0.0);
        for i in 0..3 {
            // Object rows: core entries are damped by the column softmax,
            // so rows sum to at most one.
            prop_assert!(p.row(i).iter().sum::<f64>() <= 1.0 + 1e-12);
        }
        for j in 0..4 {
            prop_assert!((0..4).map(|i| p.get(i, j)).sum::<f64>() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn consistency_ignores_global_translation(
        boxes in prop::collection::vec((box3d(), box3d(), box3d(), box3d()), 1..5),
        t in (-100.0..100.0f64, -100.0..100.0f64, -5.0..5.0f64),
    ) {
        let pc: Vec<Box3D> = boxes.iter().map(|b| b.0).collect();
        let pp: Vec<Box3D> = boxes.iter().map(|b| b.1).collect();
        let gc: Vec<Box3D> = boxes.iter().map(|b| b.2).collect();
        let gp: Vec<Box3D> = boxes.iter().map(|b| b.3).collect();
        let base = consistency(&pc, &pp, &gc, &gp);
        let mv = |v: &[Box3D]| v.iter().map(|b| b.translated([t.0, t.1, t.2])).collect::<Vec<_>>();
        let moved = consistency(&mv(&pc), &mv(&pp), &mv(&gc), &mv(&gp));
        prop_assert!((base - moved).abs() < 1e-12, "{base} vs {moved}");
        prop_assert_eq!(consistency(&gc, &gp, &gc, &gp), 0.0);
    }

    #[test]
    fn tracking_loss_ignores_relabeling(
        x in matrix(5, 6),
        p_cur in permutation(4),
        p_prev in permutation(5),
        matched in prop::collection::vec(any::<bool>(), 4),
    ) {
        // 4 current and 5 previous objects plus the un-identified slot.
        let matches: Vec<(usize, usize)> = (0..4).filter(|&i| matched[i]).map(|i| (i, i)).collect();
        let loss = |logits: Vec<f64>, m: &[(usize, usize)]| {
            let gt = GroundTruthAssociation::from_matches(&[true; 4], &[true; 5], m).unwrap();
            let mut tape = Tape::new();
            let l = tape.constant(Tensor::matrix(5, 6, logits).unwrap());
            let aff = AffinityVar { logits: l, valid_rows: vec![true; 5], valid_cols: vec![true; 6] };
            let v = tracking_loss(&mut tape, &aff, &gt).unwrap();
            tape.value(v).item()
        };
        let base = loss(x.clone(), &matches);
        let row = |i: usize| if i < 4 { p_cur[i] } else { 4 };
        let col = |j: usize| if j < 5 { p_prev[j] } else { 5 };
        let mut y = vec![0.0; 30];
        for i in 0..5 {
            for j in 0..6 {
                y[row(i) * 6 + col(j)] = x[i * 6 + j];
            }
        }
        let pm: Vec<(usize, usize)> = matches.iter().map(|&(i, j)| (row(i), col(j))).collect();
        let permuted = loss(y, &pm);
        prop_assert!((base - permuted).abs() < 1e-12, "{base} vs {permuted}");
    }

    #[test]
    fn hungarian_cost_ignores_row_and_column_order(
        x in matrix(5, 6),
        pr in permutation(5),
        pc in permutation(6),
    ) {
        let cost: Vec<Vec<f64>> = x.chunks(6).map(<[f64]>::to_vec).collect();
        let shuffled: Vec<Vec<f64>> = (0..5).map(|i| (0..6).map(|j| cost[pr[i]][pc[j]]).collect()).collect();
        let a = hungarian(&cost).unwrap().cost;
        let b = hungarian(&shuffled).unwrap().cost;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn metrics_ignore_track_relabeling(
        positions in prop::collection::vec(prop::collection::vec((-30.0..30.0f64, -30.0..30.0f64, 0usize..6), 0..5), 4..8),
        offset in 1u64..1000,
    ) {
        let b2 = Box2D::new(800.0, 450.0, 50.0, 40.0).unwrap();
        let bx = |x: f64, y: f64| Box3D::new(x, y, 0.8, 4.0, 1.8, 1.5, 0.0).unwrap();
        let gt: Vec<GroundTruthFrame> = positions.iter().enumerate().map(|(f, objs)| GroundTruthFrame {
            frame_index: f,
            timestamp: f as f64,
            objects: objs.iter().enumerate().map(|(k, &(x, y, _))| GroundTruthObject {
                id: k as u64, box3d: bx(x, y), box2d: b2, velocity: [0.0; 3],
                attribute: Attribute::Moving, category: Category::Car,
            }).collect(),
        }).collect();
        let tracks = |relabel: &dyn Fn(u64) -> u64| -> Vec<TrackFrame> {
            positions.iter().enumerate().map(|(f, objs)| {
                let mut seen = BTreeMap::new();
                TrackFrame {
                    frame_index: f,
                    timestamp: f as f64,
                    objects: objs.iter().filter(|o| seen.insert(o.2, ()).is_none()).map(|&(x, y, id)| TrackedObject {
                        track_id: relabel(id as u64), box3d: bx(x + 0.5, y), box2d: b2,
                        category: Category::Car, confidence: 0.3 + 0.1 * id as f64,
                        velocity: [0.0; 3], attribute: Attribute::Moving,
                    }).collect(),
                }
            }).collect()
        };
        prop_assume!(gt.iter().any(|g| !g.objects.is_empty()));
        let a = tracks(&|id| id);
        let b = tracks(&|id| (id * 7 + offset) % 1_000_003);
        let cfg = EvalConfig::default();
        let ra = evaluate_tracks(&[(&gt, &a)], &cfg).unwrap();
        let rb = evaluate_tracks(&[(&gt, &b)], &cfg).unwrap();
        prop_assert_eq!(ra, rb);
    }
}
