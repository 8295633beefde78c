//! Online tracking.
//!
//! Every live track remembers up to `tau` past entries (box, spatial
//! feature, confidence). A new frame is encoded once; for each remembered
//! past frame the stored features of the tracks seen then are compared with
//! the new detections by the association network, and the association
//! probabilities are summed per (detection, track). Hungarian assignment on
//! the negated sums, gated by `match_threshold`, extends tracks; leftover
//! confident detections start tracks and tracks unseen for `max_missed`
//! frames end.

mod hungarian;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use hungarian::{hungarian, hungarian_any, Assignment};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{bev_center_distance, Box3D};
use crate::net::{AssocNet, FrameInput, HeadsOutput};
use crate::scene::{Attribute, Category, Detection, DetectionFrame, TrackFrame, TrackedObject};

/// Smallest box extent after refinement, metres.
pub const MIN_EXTENT: f64 = 0.1;

/// Adds a refinement delta `[dx, dy, dz, dl, dw, dh, dyaw]` to a box.
pub fn apply_refinement(b: &Box3D, delta: &[f64; 7]) -> Box3D {
    Box3D::new(
        b.x + delta[0],
        b.y + delta[1],
        b.z + delta[2],
        (b.l + delta[3]).max(MIN_EXTENT),
        (b.w + delta[4]).max(MIN_EXTENT),
        (b.h + delta[5]).max(MIN_EXTENT),
        b.yaw + delta[6],
    )
    .expect("finite box plus finite delta")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Past frames kept per track.
    pub tau: usize,
    /// Minimum summed association probability for a match.
    pub match_threshold: f64,
    /// Consecutive misses after which a track ends.
    pub max_missed: usize,
    /// Minimum detection confidence to start a track.
    pub min_confidence: f64,
    /// Add the predicted box refinement to matched detections.
    pub refine_boxes: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            tau: 5,
            match_threshold: 0.2,
            max_missed: 3,
            min_confidence: 0.3,
            refine_boxes: true,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.max_missed == 0 {
            return Err(Error::config("tau and max_missed must be at least 1"));
        }
        if !self.match_threshold.is_finite() || !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::config("match_threshold must be finite and min_confidence in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub timestamp: f64,
    pub box3d: Box3D,
    pub feature: Vec<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Active,
    Lost { frames_missed: usize },
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub category: Category,
    pub history: VecDeque<TrackEntry>,
    pub state: TrackState,
    pub velocity: [f64; 3],
    pub attribute: Attribute,
}

impl Track {
    pub fn last(&self) -> &TrackEntry {
        self.history.back().expect("tracks always hold an entry")
    }

    fn missed(&self) -> usize {
        match self.state {
            TrackState::Lost { frames_missed } => frames_missed,
            _ => 0,
        }
    }
}

/// What happened in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// `(detection index, track id)` for matched and newly started tracks.
    pub assignments: Vec<(usize, u64)>,
    pub frame: TrackFrame,
}

fn head_row(h: &Tensor, i: usize) -> Vec<f64> {
    h.row(i).to_vec()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn tracked(track_id: u64, d: &Detection, box3d: Box3D, velocity: [f64; 3], attribute: Attribute) -> TrackedObject {
    TrackedObject {
        track_id,
        box3d,
        box2d: d.box2d,
        category: d.category,
        confidence: d.confidence,
        velocity,
        attribute,
    }
}

/// The learned tracker.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub config: TrackerConfig,
    pub tracks: Vec<Track>,
    pub next_id: u64,
    recent: VecDeque<f64>,
}

impl TrackerState {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(TrackerState {
            config,
            tracks: Vec::new(),
            next_id: 0,
            recent: VecDeque::new(),
        })
    }

    fn check_time(&self, t: f64) -> Result<()> {
        match self.recent.back() {
            Some(&last) if !(t > last) => Err(Error::invalid(format!(
                "frame timestamp {t} does not increase past {last}"
            ))),
            _ => Ok(()),
        }
    }

    /// Summed association probabilities `sim[det][track]`, and the heads of
    /// the most recent past frame.
    fn similarity(&self, net: &AssocNet, spatial: &Tensor, mask: &[bool], t: f64) -> Result<(Vec<Vec<f64>>, Option<HeadsOutput>)> {
        let n = mask.iter().filter(|&&m| m).count();
        let mut sim = vec![vec![0.0; self.tracks.len()]; n];
        let mut heads = None;
        // Newest first, so the first pair run supplies the heads.
        for &ts in self.recent.iter().rev() {
            let mut owners = Vec::new();
            let mut rows = Vec::new();
            for (k, tr) in self.tracks.iter().enumerate() {
                if let Some(e) = tr.history.iter().find(|e| e.timestamp == ts) {
                    owners.push(k);
                    rows.extend_from_slice(&e.feature);
                }
            }
            if owners.is_empty() {
                continue;
            }
            let d = spatial.cols();
            let prev = Tensor::new(vec![owners.len(), d], rows)?;
            let out = net.associate(spatial, mask, &prev, &vec![true; owners.len()], t - ts)?;
            for (i, row) in sim.iter_mut().enumerate() {
                for (r, &k) in owners.iter().enumerate() {
                    row[k] += out.association.get(i, r);
                }
            }
            if heads.is_none() {
                heads = Some(out.heads);
            }
        }
        Ok((sim, heads))
    }

    /// Processes one frame.
    pub fn step(&mut self, net: &AssocNet, frame: &DetectionFrame) -> Result<StepOutput> {
        let t = frame.timestamp;
        self.check_time(t)?;
        let dets = &frame.detections;
        let mut assignments = Vec::new();
        let mut objects = Vec::new();
        let mut matched_tracks = vec![false; self.tracks.len()];

        if !dets.is_empty() {
            let input = FrameInput::from_detections(dets, dets.len(), t, net.config())?;
            let feats = net.encode_frame(&input)?;
            let (sim, heads) = self.similarity(net, &feats.spatial, &feats.valid_mask, t)?;
            let thr = self.config.match_threshold;
            let cost: Vec<Vec<f64>> = sim
                .iter()
                .map(|r| r.iter().map(|&s| if s >= thr { -s } else { 0.0 }).collect())
                .collect();
            let mut det_used = vec![false; dets.len()];
            let pairs = if self.tracks.is_empty() { Vec::new() } else { hungarian(&cost)?.pairs };
            for (i, k) in pairs {
                if sim[i][k] < thr {
                    continue;
                }
                det_used[i] = true;
                matched_tracks[k] = true;
                let d = &dets[i];
                let (boxed, vel, attr) = match &heads {
                    Some(h) => {
                        let delta = head_row(&h.box_refine, i);
                        let delta: [f64; 7] = delta.try_into().expect("refinement has 7 entries");
                        let b = if self.config.refine_boxes { apply_refinement(&d.box3d, &delta) } else { d.box3d };
                        let v = head_row(&h.velocity, i);
                        let a = Attribute::from_index(argmax(h.attribute_logits.row(i))).unwrap_or(Attribute::Moving);
                        (b, [v[0], v[1], v[2]], a)
                    }
                    None => (d.box3d, [0.0; 3], Attribute::Moving),
                };
                let tr = &mut self.tracks[k];
                tr.history.push_back(TrackEntry {
                    timestamp: t,
                    box3d: boxed,
                    feature: feats.spatial.row(i).to_vec(),
                    confidence: d.confidence,
                });
                tr.state = TrackState::Active;
                tr.velocity = vel;
                tr.attribute = attr;
                tr.category = d.category;
                assignments.push((i, tr.id));
                objects.push(tracked(tr.id, d, boxed, vel, attr));
            }
            for (i, d) in dets.iter().enumerate() {
                if det_used[i] || d.confidence < self.config.min_confidence {
                    continue;
                }
                let id = self.next_id;
                self.next_id += 1;
                let attr = Attribute::Moving;
                self.tracks.push(Track {
                    id,
                    category: d.category,
                    history: VecDeque::from([TrackEntry {
                        timestamp: t,
                        box3d: d.box3d,
                        feature: feats.spatial.row(i).to_vec(),
                        confidence: d.confidence,
                    }]),
                    state: TrackState::Active,
                    velocity: [0.0; 3],
                    attribute: attr,
                });
                matched_tracks.push(true);
                assignments.push((i, id));
                objects.push(tracked(id, d, d.box3d, [0.0; 3], attr));
            }
        }

        for (tr, matched) in self.tracks.iter_mut().zip(&matched_tracks) {
            if !matched {
                let missed = tr.missed() + 1;
                tr.state = if missed >= self.config.max_missed {
                    TrackState::Dead
                } else {
                    TrackState::Lost { frames_missed: missed }
                };
            }
        }
        self.recent.push_back(t);
        while self.recent.len() > self.config.tau {
            self.recent.pop_front();
        }
        let oldest = *self.recent.front().expect("just pushed");
        self.tracks.retain(|tr| tr.state != TrackState::Dead);
        for tr in &mut self.tracks {
            while tr.history.len() > self.config.tau || tr.history.front().is_some_and(|e| e.timestamp < oldest) {
                tr.history.pop_front();
            }
        }
        // A track whose whole memory aged out cannot be matched any more.
        self.tracks.retain(|tr| !tr.history.is_empty());
        objects.sort_by_key(|o| o.track_id);
        Ok(StepOutput {
            assignments,
            frame: TrackFrame {
                frame_index: frame.frame_index,
                timestamp: t,
                objects,
            },
        })
    }
}

/// Runs a fresh tracker over a sequence.
pub fn track_sequence(net: &AssocNet, cfg: &TrackerConfig, frames: &[DetectionFrame]) -> Result<Vec<TrackFrame>> {
    let mut st = TrackerState::new(cfg.clone())?;
    frames.iter().map(|f| st.step(net, f).map(|o| o.frame)).collect()
}

/// Baseline without learning: greedy nearest-BEV-centre matching against
/// each track's last box.
#[derive(Debug, Clone)]
pub struct GreedyBevTracker {
    pub max_dist: f64,
    pub max_missed: usize,
    pub min_confidence: f64,
    tracks: Vec<(u64, Box3D, usize)>,
    next_id: u64,
}

impl GreedyBevTracker {
    pub fn new(max_dist: f64, max_missed: usize, min_confidence: f64) -> Self {
        GreedyBevTracker {
            max_dist,
            max_missed,
            min_confidence,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn step(&mut self, frame: &DetectionFrame) -> TrackFrame {
        let dets = &frame.detections;
        let mut pairs = Vec::new();
        for (i, d) in dets.iter().enumerate() {
            for (k, (_, b, _)) in self.tracks.iter().enumerate() {
                let dist = bev_center_distance(&d.box3d, b);
                if dist <= self.max_dist {
                    pairs.push((dist, i, k));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut det_used = vec![false; dets.len()];
        let mut tr_used = vec![false; self.tracks.len()];
        let mut objects = Vec::new();
        for (_, i, k) in pairs {
            if det_used[i] || tr_used[k] {
                continue;
            }
            det_used[i] = true;
            tr_used[k] = true;
            let d = &dets[i];
            self.tracks[k].1 = d.box3d;
            self.tracks[k].2 = 0;
            objects.push(tracked(self.tracks[k].0, d, d.box3d, [0.0; 3], Attribute::Moving));
        }
        for (k, used) in tr_used.iter().enumerate() {
            if !used {
                self.tracks[k].2 += 1;
            }
        }
        let max_missed = self.max_missed;
        self.tracks.retain(|t| t.2 < max_missed);
        for (i, d) in dets.iter().enumerate() {
            if !det_used[i] && d.confidence >= self.min_confidence {
                let id = self.next_id;
                self.next_id += 1;
                self.tracks.push((id, d.box3d, 0));
                objects.push(tracked(id, d, d.box3d, [0.0; 3], Attribute::Moving));
            }
        }
        objects.sort_by_key(|o| o.track_id);
        TrackFrame {
            frame_index: frame.frame_index,
            timestamp: frame.timestamp,
            objects,
        }
    }
}

/// Baseline without learning: Hungarian matching on the cosine similarity
/// of appearance vectors against each track's last appearance.
#[derive(Debug, Clone)]
pub struct AppearanceTracker {
    /// Matches below this cosine similarity are rejected.
    pub min_cosine: f64,
    pub max_missed: usize,
    pub min_confidence: f64,
    tracks: Vec<(u64, Vec<f64>, usize)>,
    next_id: u64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl AppearanceTracker {
    pub fn new(min_cosine: f64, max_missed: usize, min_confidence: f64) -> Self {
        AppearanceTracker {
            min_cosine,
            max_missed,
            min_confidence,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn step(&mut self, frame: &DetectionFrame) -> Result<TrackFrame> {
        let dets = &frame.detections;
        let cost: Vec<Vec<f64>> = dets
            .iter()
            .map(|d| self.tracks.iter().map(|t| -cosine(&d.appearance, &t.1)).collect())
            .collect();
        let assignment = hungarian(&cost)?;
        let mut det_used = vec![false; dets.len()];
        let mut tr_used = vec![false; self.tracks.len()];
        let mut objects = Vec::new();
        for (i, k) in assignment.pairs {
            if -cost[i][k] < self.min_cosine {
                continue;
            }
            det_used[i] = true;
            tr_used[k] = true;
            let d = &dets[i];
            self.tracks[k].1.clone_from(&d.appearance);
            self.tracks[k].2 = 0;
            objects.push(tracked(self.tracks[k].0, d, d.box3d, [0.0; 3], Attribute::Moving));
        }
        for (k, used) in tr_used.iter().enumerate() {
            if !used {
                self.tracks[k].2 += 1;
            }
        }
        let max_missed = self.max_missed;
        self.tracks.retain(|t| t.2 < max_missed);
        for (i, d) in dets.iter().enumerate() {
            if !det_used[i] && d.confidence >= self.min_confidence {
                let id = self.next_id;
                self.next_id += 1;
                self.tracks.push((id, d.appearance.clone(), 0));
                objects.push(tracked(id, d, d.box3d, [0.0; 3], Attribute::Moving));
            }
        }
        objects.sort_by_key(|o| o.track_id);
        Ok(TrackFrame {
            frame_index: frame.frame_index,
            timestamp: frame.timestamp,
            objects,
        })
    }
}
