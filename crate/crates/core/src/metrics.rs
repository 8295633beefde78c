//! CLEAR-MOT accounting and recall-averaged tracking metrics.
//!
//! Objects are matched by bird's-eye-view centre distance, class-agnostic.
//! Per frame, a ground-truth object keeps last frame's hypothesis if it is
//! still within `match_dist`; the rest are paired by minimum total distance
//! among pairs within `match_dist`. An identity switch is counted when a
//! ground-truth object is matched to a different hypothesis id than the last
//! time it was matched.
//!
//! AMOTA sweeps confidence cutoffs. For recall target `r` the highest cutoff
//! whose recall reaches `r` is used, and
//!
//! ```text
//! MOTAR(r) = clamp(1 - (IDS + FP + FN - (1 - r) * P) / (r * P), 0, 1)
//! ```
//!
//! with `P` the number of ground-truth objects. AMOTA averages MOTAR over
//! the targets (0 for unreachable targets); AMOTP averages the mean matched
//! distance (`match_dist` for unreachable targets). Worked example: 10
//! ground-truth boxes, a cutoff with 8 matches, 1 false positive and no
//! switches gives recall 0.8; at `r = 0.8`, MOTAR = 1 - (0 + 1 + 2 - 2) / 8
//! = 0.875.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bev_center_distance, Box3D};
use crate::scene::{GroundTruthFrame, TrackFrame};
use crate::tracker::hungarian_any;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// BEV centre distance gate, metres.
    pub match_dist: f64,
    pub recall_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            match_dist: 2.0,
            recall_thresholds: linspace(0.05, 1.0, 40),
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_dist > 0.0 && self.match_dist.is_finite()) {
            return Err(Error::config("match_dist must be positive"));
        }
        let t = &self.recall_thresholds;
        if t.is_empty() || t.windows(2).any(|w| w[0] >= w[1]) || t[0] <= 0.0 || t[t.len() - 1] > 1.0 {
            return Err(Error::config("recall thresholds must increase strictly within (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameMatchResult {
    /// `(gt id, hypothesis id, distance)`
    pub matches: Vec<(u64, u64, f64)>,
    pub misses: usize,
    pub false_positives: usize,
    pub id_switches: usize,
}

/// Matches one frame. `prior` maps each ground-truth id to the hypothesis id
/// it was last matched to.
pub fn match_frame(
    gt: &[(u64, Box3D)],
    hyp: &[(u64, Box3D)],
    prior: &BTreeMap<u64, u64>,
    cfg: &EvalConfig,
) -> Result<FrameMatchResult> {
    let gate = cfg.match_dist;
    let mut gt_used = vec![false; gt.len()];
    let mut hyp_used = vec![false; hyp.len()];
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (gi, (gid, gb)) in gt.iter().enumerate() {
        let Some(hid) = prior.get(gid) else { continue };
        if let Some(hi) = hyp.iter().position(|(h, _)| h == hid) {
            let d = bev_center_distance(gb, &hyp[hi].1);
            if d <= gate && !hyp_used[hi] {
                gt_used[gi] = true;
                hyp_used[hi] = true;
                pairs.push((gi, hi, d));
            }
        }
    }
    let rg: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    let rh: Vec<usize> = (0..hyp.len()).filter(|&j| !hyp_used[j]).collect();
    if !rg.is_empty() && !rh.is_empty() {
        // Infeasible pairs cost more than any feasible matching, so the
        // number of gated matches is maximized first.
        let big = 1.0 + gate * (rg.len().min(rh.len()) as f64 + 1.0);
        let cost: Vec<Vec<f64>> = rg
            .iter()
            .map(|&i| {
                rh.iter()
                    .map(|&j| {
                        let d = bev_center_distance(&gt[i].1, &hyp[j].1);
                        if d <= gate {
                            d
                        } else {
                            big
                        }
                    })
                    .collect()
            })
            .collect();
        for (a, b) in hungarian_any(&cost)?.pairs {
            if cost[a][b] <= gate {
                pairs.push((rg[a], rh[b], cost[a][b]));
                gt_used[rg[a]] = true;
                hyp_used[rh[b]] = true;
            }
        }
    }
    pairs.sort_by_key(|p| p.0);
    let mut out = FrameMatchResult::default();
    for (gi, hi, d) in pairs {
        let (gid, hid) = (gt[gi].0, hyp[hi].0);
        if prior.get(&gid).is_some_and(|&p| p != hid) {
            out.id_switches += 1;
        }
        out.matches.push((gid, hid, d));
    }
    out.misses = gt_used.iter().filter(|u| !**u).count();
    out.false_positives = hyp_used.iter().filter(|u| !**u).count();
    Ok(out)
}

/// Matches a whole sequence, keeping hypotheses with confidence at least
/// `min_confidence`.
pub fn match_sequence(
    gt: &[GroundTruthFrame],
    hyp: &[TrackFrame],
    cfg: &EvalConfig,
    min_confidence: f64,
) -> Result<Vec<FrameMatchResult>> {
    if gt.len() != hyp.len() {
        return Err(Error::invalid(format!(
            "{} ground-truth frames but {} track frames",
            gt.len(),
            hyp.len()
        )));
    }
    let mut prior = BTreeMap::new();
    let mut out = Vec::with_capacity(gt.len());
    for (g, h) in gt.iter().zip(hyp) {
        if g.frame_index != h.frame_index {
            return Err(Error::invalid(format!(
                "frame index mismatch: ground truth {} vs tracks {}",
                g.frame_index, h.frame_index
            )));
        }
        let gb: Vec<(u64, Box3D)> = g.objects.iter().map(|o| (o.id, o.box3d)).collect();
        let hb: Vec<(u64, Box3D)> = h
            .objects
            .iter()
            .filter(|o| o.confidence >= min_confidence)
            .map(|o| (o.track_id, o.box3d))
            .collect();
        let r = match_frame(&gb, &hb, &prior, cfg)?;
        for &(gid, hid, _) in &r.matches {
            prior.insert(gid, hid);
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClearMot {
    pub mota: f64,
    /// Mean matched BEV distance, metres.
    pub motp: f64,
    pub num_gt: usize,
    pub matches: usize,
    pub misses: usize,
    pub false_positives: usize,
    pub id_switches: usize,
}

/// MOTA and MOTP over frame results. MOTP is `match_dist` when nothing matched.
pub fn mota_motp(results: &[FrameMatchResult], cfg: &EvalConfig) -> Result<ClearMot> {
    let mut c = ClearMot::default();
    let mut dist = 0.0;
    for r in results {
        c.matches += r.matches.len();
        c.misses += r.misses;
        c.false_positives += r.false_positives;
        c.id_switches += r.id_switches;
        dist += r.matches.iter().map(|m| m.2).sum::<f64>();
    }
    c.num_gt = c.matches + c.misses;
    if c.num_gt == 0 {
        return Err(Error::invalid("no ground-truth objects to evaluate"));
    }
    c.mota = 1.0 - (c.misses + c.false_positives + c.id_switches) as f64 / c.num_gt as f64;
    c.motp = if c.matches > 0 { dist / c.matches as f64 } else { cfg.match_dist };
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Amota {
    pub amota: f64,
    pub amotp: f64,
}

/// Recall-normalized MOTA at recall target `r`.
pub fn motar(c: &ClearMot, r: f64) -> f64 {
    let p = c.num_gt as f64;
    let err = (c.id_switches + c.false_positives + c.misses) as f64 - (1.0 - r) * p;
    (1.0 - err / (r * p)).clamp(0.0, 1.0)
}

/// CLEAR-MOT totals over several sequences at one confidence cutoff.
pub fn clear_mot_at(sequences: &[(&[GroundTruthFrame], &[TrackFrame])], cfg: &EvalConfig, cutoff: f64) -> Result<ClearMot> {
    let mut all = Vec::new();
    for (g, h) in sequences {
        all.extend(match_sequence(g, h, cfg, cutoff)?);
    }
    mota_motp(&all, cfg)
}

/// AMOTA and AMOTP over several sequences.
pub fn amota_amotp(sequences: &[(&[GroundTruthFrame], &[TrackFrame])], cfg: &EvalConfig) -> Result<Amota> {
    cfg.validate()?;
    let mut cutoffs: Vec<f64> = sequences
        .iter()
        .flat_map(|(_, h)| h.iter().flat_map(|f| f.objects.iter().map(|o| o.confidence)))
        .collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();
    // Evaluated lazily; recall is treated as non-decreasing in the index.
    let mut cache: Vec<Option<ClearMot>> = vec![None; cutoffs.len()];
    let mut eval = |k: usize| -> Result<ClearMot> {
        if let Some(c) = cache[k] {
            return Ok(c);
        }
        let c = clear_mot_at(sequences, cfg, cutoffs[k])?;
        cache[k] = Some(c);
        Ok(c)
    };
    let num_gt = if cutoffs.is_empty() {
        clear_mot_at(sequences, cfg, f64::INFINITY)?.num_gt
    } else {
        eval(0)?.num_gt
    };
    let recall = |c: &ClearMot| c.matches as f64 / num_gt as f64;
    let mut sum_a = 0.0;
    let mut sum_p = 0.0;
    for &r in &cfg.recall_thresholds {
        let mut found = None;
        if !cutoffs.is_empty() && recall(&eval(cutoffs.len() - 1)?) >= r {
            let (mut lo, mut hi) = (0, cutoffs.len() - 1);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if recall(&eval(mid)?) >= r {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            found = Some(eval(lo)?);
        }
        match found {
            Some(c) => {
                sum_a += motar(&c, r);
                sum_p += c.motp;
            }
            None => sum_p += cfg.match_dist,
        }
    }
    let n = cfg.recall_thresholds.len() as f64;
    Ok(Amota {
        amota: sum_a / n,
        amotp: sum_p / n,
    })
}

/// Full metric set for several sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub clear: ClearMot,
    pub amota: f64,
    pub amotp: f64,
}

pub fn evaluate_tracks(sequences: &[(&[GroundTruthFrame], &[TrackFrame])], cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let clear = clear_mot_at(sequences, cfg, f64::NEG_INFINITY)?;
    let a = amota_amotp(sequences, cfg)?;
    Ok(MetricsReport {
        clear,
        amota: a.amota,
        amotp: a.amotp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64) -> Box3D {
        Box3D::new(x, y, 0.8, 4.0, 2.0, 1.6, 0.0).unwrap()
    }

    #[test]
    fn identical_boxes_match_without_switches() {
        let cfg = EvalConfig::default();
        let gt = vec![(1, bx(0.0, 0.0)), (2, bx(10.0, 0.0))];
        let hyp = vec![(7, bx(0.0, 0.0)), (8, bx(10.0, 0.0))];
        let r = match_frame(&gt, &hyp, &BTreeMap::new(), &cfg).unwrap();
        assert_eq!(r.matches, vec![(1, 7, 0.0), (2, 8, 0.0)]);
        assert_eq!((r.misses, r.false_positives, r.id_switches), (0, 0, 0));
    }

    #[test]
    fn empty_hypotheses_are_misses() {
        let cfg = EvalConfig::default();
        let gt = vec![(1, bx(0.0, 0.0)), (2, bx(10.0, 0.0))];
        let r = match_frame(&gt, &[], &BTreeMap::new(), &cfg).unwrap();
        assert_eq!(r.misses, 2);
        assert!(r.matches.is_empty());
    }

    #[test]
    fn prior_pairing_persists_within_gate() {
        let cfg = EvalConfig::default();
        // hyp 5 is 1.5 m off, hyp 6 is exact; the prior pairing wins.
        let gt = vec![(1, bx(0.0, 0.0))];
        let hyp = vec![(5, bx(1.5, 0.0)), (6, bx(0.0, 0.0))];
        let prior = BTreeMap::from([(1, 5)]);
        let r = match_frame(&gt, &hyp, &prior, &cfg).unwrap();
        assert_eq!(r.matches, vec![(1, 5, 1.5)]);
        assert_eq!(r.id_switches, 0);
        assert_eq!(r.false_positives, 1);
    }

    #[test]
    fn gating_rejects_far_pairs() {
        let cfg = EvalConfig::default();
        let r = match_frame(&[(1, bx(0.0, 0.0))], &[(2, bx(2.5, 0.0))], &BTreeMap::new(), &cfg).unwrap();
        assert_eq!((r.misses, r.false_positives), (1, 1));
    }

    #[test]
    fn motar_worked_example() {
        let c = ClearMot {
            num_gt: 10,
            matches: 8,
            misses: 2,
            false_positives: 1,
            ..Default::default()
        };
        assert!((motar(&c, 0.8) - 0.875).abs() < 1e-12);
    }

    #[test]
    fn zero_ground_truth_is_error() {
        assert!(mota_motp(&[FrameMatchResult::default()], &EvalConfig::default()).is_err());
    }
}
