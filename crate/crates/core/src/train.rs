//! Optimization of the association network on simulated scenes.
//!
//! A training sample is a frame pair `(t, t - zeta)` drawn uniformly with
//! `t >= tau` and `zeta` in `dt_range`. The loss is the tracking loss on the
//! pair's affinity, the auxiliary head losses on matched current objects and
//! the temporal-consistency loss between refined boxes of the two frames. The
//! earlier frame's refinement comes from its own pair `(t - zeta, t - zeta - 1)`
//! and is zero when that frame has no predecessor. Gradients of the samples
//! in a batch are computed independently and summed in sample order, so the
//! result does not depend on the number of threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::losses::{
    aux_losses, combined_loss, temporal_consistency_loss, tracking_loss, ConsistencyTerm, HeadTargets,
    LossBreakdown, LossParts,
};
use crate::metrics::{evaluate_tracks, EvalConfig, MetricsReport};
use crate::net::{dual_softmax, AssocNet, FrameInput, Graph, HeadVars, NetConfig, ParamStore};
use crate::scene::{Detection, GroundTruthFrame, TrackFrame};
use crate::sim::{gt_association, Scenario};
use crate::tracker::{track_sequence, TrackerConfig, TrackerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// Epochs (1-based) at whose start the learning rate drops tenfold.
    pub lr_drop_epochs: Vec<usize>,
    /// Steps over which the learning rate ramps linearly from zero.
    pub warmup_steps: u64,
    pub batch_pairs: usize,
    /// Inclusive range of frame gaps.
    pub dt_range: [usize; 2],
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub use_consistency_loss: bool,
    /// Run the tracker on validation scenes after every epoch.
    pub validate: bool,
    pub tracker: TrackerConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            steps_per_epoch: 100,
            learning_rate: 1.25e-4,
            lr_drop_epochs: vec![4],
            warmup_steps: 0,
            batch_pairs: 8,
            dt_range: [1, 5],
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 0.0,
            use_consistency_loss: true,
            validate: true,
            tracker: TrackerConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate_for(&self, net: &NetConfig) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and >= 0"));
        }
        let [lo, hi] = self.dt_range;
        if lo < 1 || hi < lo || hi > net.tau {
            return Err(Error::config(format!("dt_range {lo}..={hi} must lie within 1..={}", net.tau)));
        }
        if self.batch_pairs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::config("batch_pairs and steps_per_epoch must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config("invalid optimizer hyperparameters"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::config("grad_clip must be >= 0"));
        }
        self.tracker.validate()?;
        self.eval.validate()
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&e| e >= 1 && epoch + 1 >= e).count();
        self.learning_rate * 0.1f64.powi(drops as i32)
    }

    /// Learning rate of the 1-based optimizer step `step` during `epoch`.
    pub fn lr_at_step(&self, epoch: usize, step: u64) -> f64 {
        let ramp = if self.warmup_steps > 0 {
            (step as f64 / self.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        self.lr_at(epoch) * ramp
    }
}

/// One sampled frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub scene: usize,
    pub t: usize,
    pub zeta: usize,
}

/// Draws `cfg.batch_pairs` pairs. Every scene must have more than `tau` frames.
pub fn sample_pairs(scenes: &[Scenario], cfg: &TrainConfig, tau: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PairSample>> {
    if scenes.is_empty() {
        return Err(Error::invalid("no scenes to sample from"));
    }
    if let Some((i, s)) = scenes.iter().enumerate().find(|(_, s)| s.detections.len() < tau + 1) {
        return Err(Error::invalid(format!(
            "scene {i} has {} frames, need at least {}",
            s.detections.len(),
            tau + 1
        )));
    }
    Ok((0..cfg.batch_pairs)
        .map(|_| {
            let scene = rng.random_range(0..scenes.len());
            let n = scenes[scene].detections.len();
            let t = rng.random_range(tau..n);
            let zeta = rng.random_range(cfg.dt_range[0]..=cfg.dt_range[1]);
            PairSample { scene, t, zeta }
        })
        .collect())
}

fn box_rows(dets: &[Detection], idx: &[usize]) -> Result<Tensor> {
    let rows: Vec<[f64; 7]> = idx.iter().map(|&i| dets[i].box3d.to_array()).collect();
    Tensor::from_rows(&rows)
}

fn encode_input(g: &mut Graph<'_>, dets: &[Detection], ts: f64) -> Result<crate::net::EncodedFrame> {
    let input = FrameInput::from_detections(dets, dets.len(), ts, g.net().config())?;
    g.encode(&input)
}

struct PairForward {
    heads: HeadVars,
    affinity: crate::net::AffinityVar,
}

fn pair_forward(g: &mut Graph<'_>, cur: &crate::net::EncodedFrame, prev: &crate::net::EncodedFrame, dt: f64) -> Result<PairForward> {
    let mp = g.motion_modeling(prev.spatial, dt)?;
    let tf = g.temporal_flow(cur.spatial, &cur.mask, mp, &prev.mask)?;
    let heads = g.heads(tf.aggregated)?;
    Ok(PairForward {
        heads,
        affinity: tf.affinity,
    })
}

fn head_targets(dets: &[Detection], gt: &GroundTruthFrame, n_attr: usize) -> Result<Option<HeadTargets>> {
    let mut rows = Vec::new();
    let mut vel = Vec::new();
    let mut attr = Vec::new();
    let mut gtb = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        let Some(o) = d.gt_id.and_then(|id| gt.object(id)) else { continue };
        rows.push(i);
        vel.push(o.velocity);
        let mut a = vec![0.0; n_attr];
        a[o.attribute.index()] = 1.0;
        attr.push(a);
        gtb.push(o.box3d.to_array());
    }
    if rows.is_empty() {
        return Ok(None);
    }
    Ok(Some(HeadTargets {
        velocity: Tensor::from_rows(&vel)?,
        attribute: Tensor::from_rows(&attr)?,
        det_boxes: box_rows(dets, &rows)?,
        gt_boxes: Tensor::from_rows(&gtb)?,
        rows,
    }))
}

/// Loss and weight gradients of one pair. `None` when either frame is empty.
pub fn pair_gradients(
    net: &AssocNet,
    scene: &Scenario,
    s: PairSample,
    use_consistency: bool,
) -> Result<Option<(Vec<Option<Tensor>>, LossBreakdown)>> {
    let frames = &scene.detections;
    let (cur, prev) = (&frames[s.t], &frames[s.t - s.zeta]);
    if cur.detections.is_empty() || prev.detections.is_empty() {
        return Ok(None);
    }
    let cfg = net.config();
    let mut g = net.graph(true);
    let ec = encode_input(&mut g, &cur.detections, cur.timestamp)?;
    let ep = encode_input(&mut g, &prev.detections, prev.timestamp)?;
    let a = pair_forward(&mut g, &ec, &ep, cur.timestamp - prev.timestamp)?;
    let gt = gt_association(&cur.detections, &prev.detections, cur.detections.len(), prev.detections.len())?;
    let tracking = tracking_loss(&mut g.tape, &a.affinity, &gt)?;

    let targets = head_targets(&cur.detections, &scene.ground_truth[s.t], cfg.n_attributes)?;
    let aux = match &targets {
        Some(t) => aux_losses(&mut g.tape, &a.heads, t)?,
        None => {
            let z = g.tape.constant(Tensor::scalar(0.0));
            crate::losses::AuxLossVars {
                velocity: z,
                attribute: z,
                box_refine: z,
                total: z,
            }
        }
    };

    let consistency = if use_consistency {
        consistency_term(&mut g, scene, s, &ep, &a.heads, &gt.matches())?
    } else {
        g.tape.constant(Tensor::scalar(0.0))
    };
    let (total, breakdown) = combined_loss(
        &mut g.tape,
        &LossParts {
            tracking,
            consistency,
            aux,
        },
    )?;
    g.tape.backward(total)?;
    Ok(Some((g.param_grads(), breakdown)))
}

/// Refined boxes of matched identities in both frames against ground truth.
fn consistency_term(
    g: &mut Graph<'_>,
    scene: &Scenario,
    s: PairSample,
    ep: &crate::net::EncodedFrame,
    cur_heads: &HeadVars,
    matches: &[(usize, usize)],
) -> Result<crate::autodiff::Var> {
    let (tc, tp) = (s.t, s.t - s.zeta);
    let cur = &scene.detections[tc].detections;
    let prev = &scene.detections[tp].detections;
    let (gc, gp) = (&scene.ground_truth[tc], &scene.ground_truth[tp]);
    let mut ci = Vec::new();
    let mut pi = Vec::new();
    let mut gcb = Vec::new();
    let mut gpb = Vec::new();
    for &(i, j) in matches {
        let id = cur[i].gt_id.expect("matched detections carry identities");
        if let (Some(a), Some(b)) = (gc.object(id), gp.object(id)) {
            ci.push(i);
            pi.push(j);
            gcb.push(a.box3d.to_array());
            gpb.push(b.box3d.to_array());
        }
    }
    if ci.is_empty() {
        return temporal_consistency_loss(&mut g.tape, &[]);
    }
    let det_c = g.tape.constant(box_rows(cur, &ci)?);
    let dc = g.tape.gather_rows(cur_heads.box_refine, &ci)?;
    let pred_cur = g.tape.add(det_c, dc)?;
    let det_p = g.tape.constant(box_rows(prev, &pi)?);
    let pred_prev = if tp >= 1 && !scene.detections[tp - 1].detections.is_empty() {
        let pp = &scene.detections[tp - 1];
        let epp = encode_input(g, &pp.detections, pp.timestamp)?;
        let b = pair_forward(g, ep, &epp, scene.detections[tp].timestamp - pp.timestamp)?;
        let dp = g.tape.gather_rows(b.heads.box_refine, &pi)?;
        g.tape.add(det_p, dp)?
    } else {
        det_p
    };
    temporal_consistency_loss(
        &mut g.tape,
        &[ConsistencyTerm {
            pred_cur,
            pred_prev,
            gt_cur: Tensor::from_rows(&gcb)?,
            gt_prev: Tensor::from_rows(&gpb)?,
        }],
    )
}

/// First and second moment estimates of the adaptive optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Result of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the non-empty pairs of the batch.
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

/// Forward, backward and one adaptive-moment update on a batch of pairs.
pub fn train_step(
    net: &mut AssocNet,
    adam: &mut AdamState,
    scenes: &[Scenario],
    batch: &[PairSample],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(LossBreakdown, f64)> {
    let shared: &AssocNet = net;
    let results: Vec<Result<Option<(Vec<Option<Tensor>>, LossBreakdown)>>> = batch
        .par_iter()
        .map(|s| pair_gradients(shared, &scenes[s.scene], *s, cfg.use_consistency_loss))
        .collect();
    let mut sum: Vec<Tensor> = net.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    let mut mean = LossBreakdown::default();
    let mut used = 0usize;
    for r in results {
        let Some((grads, b)) = r? else { continue };
        used += 1;
        for (acc, g) in sum.iter_mut().zip(grads) {
            if let Some(g) = g {
                acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
            }
        }
        mean.tracking += b.tracking;
        mean.consistency += b.consistency;
        mean.velocity += b.velocity;
        mean.attribute += b.attribute;
        mean.box_refine += b.box_refine;
        mean.total += b.total;
    }
    if used == 0 {
        return Ok((mean, 0.0));
    }
    let k = used as f64;
    for v in [
        &mut mean.tracking,
        &mut mean.consistency,
        &mut mean.velocity,
        &mut mean.attribute,
        &mut mean.box_refine,
        &mut mean.total,
    ] {
        *v /= k;
    }
    if !mean.total.is_finite() {
        return Err(Error::numeric(format!("non-finite loss at step {}", adam.t + 1)));
    }
    let mut sq = 0.0;
    for g in &mut sum {
        for v in g.data_mut() {
            *v /= k;
            sq += *v * *v;
        }
    }
    let norm = sq.sqrt();
    let scale = if cfg.grad_clip > 0.0 && norm > cfg.grad_clip { cfg.grad_clip / norm } else { 1.0 };
    adam.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(adam.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(adam.t as i32);
    let ids: Vec<_> = net.params().ids().collect();
    for (n, id) in ids.into_iter().enumerate() {
        let p = net.params_mut().get_mut(id).data_mut();
        let m = adam.m[n].data_mut();
        let v = adam.v[n].data_mut();
        for (((pw, mw), vw), gw) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(sum[n].data()) {
            let g = gw * scale;
            *mw = cfg.beta1 * *mw + (1.0 - cfg.beta1) * g;
            *vw = cfg.beta2 * *vw + (1.0 - cfg.beta2) * g * g;
            let upd = lr * (*mw / bc1) / ((*vw / bc2).sqrt() + cfg.adam_eps);
            *pw -= upd;
        }
    }
    Ok((mean, norm))
}

/// Serializable state of the sampling generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

/// Weights plus everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net_config: NetConfig,
    pub weights: Vec<(String, Tensor)>,
    pub step: u64,
    pub epoch: usize,
    pub rng: RngState,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_net(net: &AssocNet, step: u64, epoch: usize, rng: RngState, adam: Option<AdamState>) -> Self {
        Checkpoint {
            net_config: net.config().clone(),
            weights: net.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            step,
            epoch,
            rng,
            adam,
        }
    }

    /// Initial weights for a configuration, before any training.
    pub fn initial(net_config: &NetConfig, seed: u64) -> Result<Self> {
        let net = AssocNet::new(net_config.clone())?;
        Ok(Checkpoint::from_net(&net, 0, 0, RngState::capture(&ChaCha8Rng::seed_from_u64(seed)), None))
    }

    pub fn to_net(&self) -> Result<AssocNet> {
        let mut net = AssocNet::new(self.net_config.clone())?;
        net.params_mut()
            .load(self.weights.iter().map(|(n, t)| (n.as_str(), t.clone())))?;
        if let Some(a) = &self.adam {
            let ok = a.m.len() == self.weights.len()
                && a.v.len() == self.weights.len()
                && a.m.iter().zip(&a.v).zip(&self.weights).all(|((m, v), (_, w))| m.shape() == w.shape() && v.shape() == w.shape());
            if !ok {
                return Err(Error::Schema("optimizer state does not match the weights".into()));
            }
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub mean_loss: LossBreakdown,
    pub validation: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub last: Checkpoint,
    /// Highest validation AMOTA among finished epochs, or `last` without
    /// validation.
    pub best: Checkpoint,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
}

/// Trains from scratch, or continues `resume` to `cfg.epochs` epochs.
pub fn fit(
    cfg: &TrainConfig,
    net_config: &NetConfig,
    train: &[Scenario],
    val: &[Scenario],
    resume: Option<&Checkpoint>,
    mut on_step: impl FnMut(&StepLog),
) -> Result<FitResult> {
    if train.is_empty() {
        return Err(Error::invalid("fit needs at least one training scene"));
    }
    let (mut net, mut adam, mut rng, mut step, start_epoch) = match resume {
        Some(c) => {
            if &c.net_config != net_config {
                return Err(Error::config("checkpoint network configuration differs from the requested one"));
            }
            let net = c.to_net()?;
            let adam = c.adam.clone().unwrap_or_else(|| AdamState::new(net.params()));
            (net, adam, c.rng.restore(), c.step, c.epoch)
        }
        None => {
            let net = AssocNet::new(net_config.clone())?;
            let adam = AdamState::new(net.params());
            (net, adam, ChaCha8Rng::seed_from_u64(cfg.seed), 0, 0)
        }
    };
    cfg.validate_for(net.config())?;
    let tau = net.config().tau;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let validate = cfg.validate && !val.is_empty();
    if start_epoch == 0 && validate {
        epochs.push(EpochLog {
            epoch: 0,
            step,
            mean_loss: LossBreakdown::default(),
            validation: Some(evaluate(&net, val, &cfg.tracker, &cfg.eval)?),
        });
    }
    let mut best: Option<(f64, Checkpoint)> = None;
    for epoch in start_epoch..cfg.epochs {
        let mut acc = LossBreakdown::default();
        for _ in 0..cfg.steps_per_epoch {
            let lr = cfg.lr_at_step(epoch, step + 1);
            let batch = sample_pairs(train, cfg, tau, &mut rng)?;
            let (loss, grad_norm) = train_step(&mut net, &mut adam, train, &batch, cfg, lr)?;
            step += 1;
            let log = StepLog {
                step,
                epoch: epoch + 1,
                lr,
                loss,
                grad_norm,
            };
            on_step(&log);
            steps.push(log);
            acc.tracking += loss.tracking;
            acc.consistency += loss.consistency;
            acc.velocity += loss.velocity;
            acc.attribute += loss.attribute;
            acc.box_refine += loss.box_refine;
            acc.total += loss.total;
        }
        let k = cfg.steps_per_epoch as f64;
        let mean_loss = LossBreakdown {
            tracking: acc.tracking / k,
            consistency: acc.consistency / k,
            velocity: acc.velocity / k,
            attribute: acc.attribute / k,
            box_refine: acc.box_refine / k,
            total: acc.total / k,
        };
        let validation = if validate {
            Some(evaluate(&net, val, &cfg.tracker, &cfg.eval)?)
        } else {
            None
        };
        let ck = Checkpoint::from_net(&net, step, epoch + 1, RngState::capture(&rng), Some(adam.clone()));
        if let Some(v) = &validation {
            if best.as_ref().is_none_or(|(a, _)| v.amota > *a) {
                best = Some((v.amota, ck.clone()));
            }
        }
        epochs.push(EpochLog {
            epoch: epoch + 1,
            step,
            mean_loss,
            validation,
        });
    }
    let last = Checkpoint::from_net(&net, step, cfg.epochs.max(start_epoch), RngState::capture(&rng), Some(adam));
    let best = best.map(|b| b.1).unwrap_or_else(|| last.clone());
    Ok(FitResult {
        last,
        best,
        steps,
        epochs,
    })
}

/// Tracks every scene (in parallel, one tracker per scene).
pub fn track_scenes(net: &AssocNet, scenes: &[Scenario], cfg: &TrackerConfig) -> Result<Vec<Vec<TrackFrame>>> {
    scenes
        .par_iter()
        .map(|s| track_sequence(net, cfg, &s.detections))
        .collect()
}

/// Tracker plus metrics on held-out scenes.
pub fn evaluate(net: &AssocNet, scenes: &[Scenario], tracker: &TrackerConfig, eval: &EvalConfig) -> Result<MetricsReport> {
    let tracks = track_scenes(net, scenes, tracker)?;
    let seqs: Vec<(&[GroundTruthFrame], &[TrackFrame])> = scenes
        .iter()
        .zip(&tracks)
        .map(|(s, t)| (s.ground_truth.as_slice(), t.as_slice()))
        .collect();
    evaluate_tracks(&seqs, eval)
}

/// Fraction of matched pairs at a gap of `gap` frames whose ground-truth
/// entry is the row maximum of the association probabilities.
pub fn association_accuracy(net: &AssocNet, scenes: &[Scenario], gap: usize) -> Result<f64> {
    let counts: Vec<Result<(usize, usize)>> = scenes
        .par_iter()
        .map(|s| {
            let mut hit = 0;
            let mut total = 0;
            for t in gap..s.detections.len() {
                let (cur, prev) = (&s.detections[t], &s.detections[t - gap]);
                if cur.detections.is_empty() || prev.detections.is_empty() {
                    continue;
                }
                let gt = gt_association(&cur.detections, &prev.detections, cur.detections.len(), prev.detections.len())?;
                let matches = gt.matches();
                if matches.is_empty() {
                    continue;
                }
                let mut g = net.graph(false);
                let ec = encode_input(&mut g, &cur.detections, cur.timestamp)?;
                let ep = encode_input(&mut g, &prev.detections, prev.timestamp)?;
                let a = pair_forward(&mut g, &ec, &ep, cur.timestamp - prev.timestamp)?;
                let p = dual_softmax(&mut g.tape, &a.affinity)?;
                let prob = g.tape.value(p);
                for (i, j) in matches {
                    let row = prob.row(i);
                    let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                    hit += usize::from(best == j);
                    total += 1;
                }
            }
            Ok((hit, total))
        })
        .collect();
    let mut hit = 0;
    let mut total = 0;
    for c in counts {
        let (h, t) = c?;
        hit += h;
        total += t;
    }
    if total == 0 {
        return Err(Error::invalid("no matched pairs to score"));
    }
    Ok(hit as f64 / total as f64)
}

/// Mean loss terms over every pair `(t, t - zeta)` with `t >= tau` and
/// `zeta` in `zetas`, consistency term included.
pub fn validation_loss(net: &AssocNet, scenes: &[Scenario], zetas: &[usize]) -> Result<LossBreakdown> {
    let tau = net.config().tau;
    let samples: Vec<PairSample> = scenes
        .iter()
        .enumerate()
        .flat_map(|(scene, s)| {
            (tau..s.detections.len()).flat_map(move |t| zetas.iter().map(move |&zeta| PairSample { scene, t, zeta }))
        })
        .filter(|p| p.zeta >= 1 && p.zeta <= p.t)
        .collect();
    let parts: Vec<Result<Option<LossBreakdown>>> = samples
        .par_iter()
        .map(|p| Ok(pair_gradients(net, &scenes[p.scene], *p, true)?.map(|r| r.1)))
        .collect();
    let mut acc = LossBreakdown::default();
    let mut n = 0usize;
    for p in parts {
        let Some(b) = p? else { continue };
        n += 1;
        acc.tracking += b.tracking;
        acc.consistency += b.consistency;
        acc.velocity += b.velocity;
        acc.attribute += b.attribute;
        acc.box_refine += b.box_refine;
        acc.total += b.total;
    }
    if n == 0 {
        return Err(Error::invalid("no validation pairs"));
    }
    let k = n as f64;
    Ok(LossBreakdown {
        tracking: acc.tracking / k,
        consistency: acc.consistency / k,
        velocity: acc.velocity / k,
        attribute: acc.attribute / k,
        box_refine: acc.box_refine / k,
        total: acc.total / k,
    })
}

/// Mean magnitude of the third finite difference of box centres along every
/// track, over runs of four consecutive frames, in m/s^3.
pub fn mean_jerk(tracks: &[TrackFrame]) -> (f64, usize) {
    use std::collections::BTreeMap;
    let mut paths: BTreeMap<u64, Vec<(usize, f64, [f64; 3])>> = BTreeMap::new();
    for f in tracks {
        for o in &f.objects {
            paths.entry(o.track_id).or_default().push((f.frame_index, f.timestamp, o.box3d.center()));
        }
    }
    let mut sum = 0.0;
    let mut n = 0;
    for p in paths.values() {
        for w in p.windows(4) {
            if w[3].0 != w[0].0 + 3 {
                continue;
            }
            let dt = (w[3].1 - w[0].1) / 3.0;
            let j: f64 = (0..3)
                .map(|k| {
                    let d = w[3].2[k] - 3.0 * w[2].2[k] + 3.0 * w[1].2[k] - w[0].2[k];
                    (d / dt.powi(3)).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            sum += j;
            n += 1;
        }
    }
    (if n > 0 { sum / n as f64 } else { 0.0 }, n)
}

/// Mean jerk of the refined trajectories and of the same trajectories built
/// from the unrefined detector boxes, pooled over every scene. Both come from
/// one tracking run with refinement on, so identities are shared.
pub fn refinement_jerk(net: &AssocNet, scenes: &[Scenario], cfg: &TrackerConfig) -> Result<(f64, f64)> {
    let cfg = TrackerConfig {
        refine_boxes: true,
        ..cfg.clone()
    };
    let per_scene: Vec<Result<[(f64, usize); 2]>> = scenes
        .par_iter()
        .map(|s| {
            let mut st = TrackerState::new(cfg.clone())?;
            let mut refined = Vec::with_capacity(s.detections.len());
            let mut raw = Vec::with_capacity(s.detections.len());
            for f in &s.detections {
                let out = st.step(net, f)?;
                let mut r = out.frame.clone();
                for o in &mut r.objects {
                    if let Some(&(i, _)) = out.assignments.iter().find(|a| a.1 == o.track_id) {
                        o.box3d = f.detections[i].box3d;
                    }
                }
                refined.push(out.frame);
                raw.push(r);
            }
            Ok([mean_jerk(&refined), mean_jerk(&raw)])
        })
        .collect();
    let mut acc = [(0.0, 0usize); 2];
    for r in per_scene {
        for (a, (m, n)) in acc.iter_mut().zip(r?) {
            a.0 += m * n as f64;
            a.1 += n;
        }
    }
    let mean = |(s, n): (f64, usize)| if n > 0 { s / n as f64 } else { 0.0 };
    Ok((mean(acc[0]), mean(acc[1])))
}
