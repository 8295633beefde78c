//! Deterministic synthetic driving scenes.
//!
//! A stationary (or straight-driving) ego vehicle carries one forward-facing
//! pinhole camera 1.5 m above the ground. A fixed number of objects live in
//! the visible part of the arena `x in [5, 50]`, `|y| <= 15` (ego frame);
//! an object that leaves it is replaced by a fresh identity. Each frame the
//! detector stand-in perturbs every visible box, drops some, and adds
//! Poisson-distributed false positives.
//!
//! All randomness comes from one `ChaCha8Rng` seeded with
//! `ChaCha8Rng::seed_from_u64(config.seed)`, consumed in a fixed order, so a
//! seed reproduces a scene bit for bit on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{corners3d, normalize_angle, Box2D, Box3D, CameraModel, EgoPose};
use crate::losses::GroundTruthAssociation;
use crate::scene::{
    Attribute, Category, Detection, DetectionFrame, GroundTruthFrame, GroundTruthObject, MOVING_SPEED,
};

/// Camera height above the ground plane, metres.
pub const CAMERA_HEIGHT: f64 = 1.5;
const ARENA_X: [f64; 2] = [5.0, 50.0];
const ARENA_Y: f64 = 15.0;
/// Corners closer than this (camera depth) make an object invisible.
const MIN_DEPTH: f64 = 0.5;
const SPAWN_SEPARATION: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Simultaneously live objects.
    pub n_objects: usize,
    pub n_frames: usize,
    /// Seconds between frames.
    pub frame_dt: f64,
    /// Fractions of constant-velocity, constant-turn and stationary objects.
    pub motion_mix: [f64; 3],
    pub pos_noise_sigma: f64,
    pub dim_noise_sigma: f64,
    pub yaw_noise_sigma: f64,
    /// Per-component Gaussian noise added to the identity vector before
    /// renormalization.
    pub reid_noise_sigma: f64,
    pub dropout_prob: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    pub d_reid: usize,
    /// Maximum detections per frame; false positives beyond it are discarded.
    pub k_max: usize,
    /// Ego forward speed, m/s.
    pub ego_speed: f64,
    pub camera: CameraModel,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_objects: 8,
            n_frames: 40,
            frame_dt: 0.5,
            motion_mix: [0.6, 0.2, 0.2],
            pos_noise_sigma: 0.3,
            dim_noise_sigma: 0.05,
            yaw_noise_sigma: 0.05,
            reid_noise_sigma: 0.15,
            dropout_prob: 0.1,
            fp_rate: 0.3,
            d_reid: 32,
            k_max: 16,
            ego_speed: 0.0,
            camera: CameraModel::default(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// No detector noise, dropout or false positives.
    pub fn noiseless(self) -> Self {
        ScenarioConfig {
            pos_noise_sigma: 0.0,
            dim_noise_sigma: 0.0,
            yaw_noise_sigma: 0.0,
            reid_noise_sigma: 0.0,
            dropout_prob: 0.0,
            fp_rate: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_objects > self.k_max {
            return Err(Error::config(format!(
                "n_objects {} exceeds k_max {}",
                self.n_objects, self.k_max
            )));
        }
        if self.n_frames == 0 || self.d_reid == 0 {
            return Err(Error::config("n_frames and d_reid must be positive"));
        }
        if !(self.frame_dt > 0.0 && self.frame_dt.is_finite()) {
            return Err(Error::config("frame_dt must be positive"));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::config("dropout_prob must lie in [0, 1]"));
        }
        let mix_ok = self.motion_mix.iter().all(|&p| (0.0..=1.0).contains(&p))
            && (self.motion_mix.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !mix_ok {
            return Err(Error::config("motion_mix must be three probabilities summing to 1"));
        }
        let sigmas = [
            self.pos_noise_sigma,
            self.dim_noise_sigma,
            self.yaw_noise_sigma,
            self.reid_noise_sigma,
            self.fp_rate,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::config("noise sigmas and fp_rate must be finite and >= 0"));
        }
        if !self.ego_speed.is_finite() {
            return Err(Error::config("ego_speed must be finite"));
        }
        self.camera.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionModel {
    ConstantVelocity,
    ConstantTurn,
    Stationary,
}

/// A generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub ground_truth: Vec<GroundTruthFrame>,
    pub detections: Vec<DetectionFrame>,
}

#[derive(Debug, Clone)]
struct Actor {
    id: u64,
    category: Category,
    motion: MotionModel,
    /// Ego-independent world state.
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    yaw_rate: f64,
    dims: [f64; 3],
    identity: Vec<f64>,
}

impl Actor {
    fn box3d(&self) -> Box3D {
        Box3D::new(self.x, self.y, self.dims[2] / 2.0, self.dims[0], self.dims[1], self.dims[2], self.heading)
            .expect("actor state is finite with positive dims")
    }

    fn velocity(&self) -> [f64; 3] {
        [self.speed * self.heading.cos(), self.speed * self.heading.sin(), 0.0]
    }

    fn attribute(&self) -> Attribute {
        if self.speed > MOVING_SPEED {
            Attribute::Moving
        } else if self.category == Category::Car {
            Attribute::Parked
        } else {
            Attribute::Stopped
        }
    }

    fn advance(&mut self, dt: f64) {
        match self.motion {
            MotionModel::Stationary => {}
            MotionModel::ConstantVelocity => {
                self.x += self.speed * self.heading.cos() * dt;
                self.y += self.speed * self.heading.sin() * dt;
            }
            MotionModel::ConstantTurn => {
                let h1 = self.heading + self.yaw_rate * dt;
                let r = self.speed / self.yaw_rate;
                self.x += r * (h1.sin() - self.heading.sin());
                self.y -= r * (h1.cos() - self.heading.cos());
                self.heading = normalize_angle(h1);
            }
        }
    }
}

fn typical_dims(cat: Category) -> [f64; 3] {
    match cat {
        Category::Car => [4.5, 1.9, 1.6],
        Category::Pedestrian => [0.7, 0.7, 1.75],
        Category::Cyclist => [1.8, 0.6, 1.7],
    }
}

fn speed_range(cat: Category) -> (f64, f64) {
    match cat {
        Category::Car => (2.0, 8.0),
        Category::Pedestrian => (0.8, 1.8),
        Category::Cyclist => (2.0, 5.0),
    }
}

/// Ego pose at a frame: straight drive along world +x.
pub fn ego_pose(cfg: &ScenarioConfig, frame: usize) -> EgoPose {
    EgoPose::from_heading(0.0, [cfg.ego_speed * cfg.frame_dt * frame as f64, 0.0, 0.0])
}

/// Ego-frame point to camera-frame point (x right, y down, z forward).
fn ego_to_camera(p: [f64; 3]) -> [f64; 3] {
    [-p[1], CAMERA_HEIGHT - p[2], p[0]]
}

/// Axis-aligned image hull of a world-frame box, clipped to the image.
/// `None` when the box is outside the arena or the camera's view.
pub fn project_box(cfg: &ScenarioConfig, pose: &EgoPose, b: &Box3D) -> Option<Box2D> {
    let inv = pose.inverse();
    let c = inv.transform_point(b.center());
    if c[0] < ARENA_X[0] || c[0] > ARENA_X[1] || c[1].abs() > ARENA_Y {
        return None;
    }
    let cam = &cfg.camera;
    let centre_px = cam.project(ego_to_camera(c)).ok()?;
    if !cam.contains(centre_px) {
        return None;
    }
    let mut pts = Vec::with_capacity(8);
    for p in corners3d(b).ok()? {
        let q = ego_to_camera(inv.transform_point(p));
        if q[2] < MIN_DEPTH {
            return None;
        }
        let uv = cam.project(q).ok()?;
        pts.push([uv[0].clamp(0.0, cam.image_w), uv[1].clamp(0.0, cam.image_h)]);
    }
    Box2D::hull(&pts).ok()
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit vector stored at `f32` precision so text round trips are exact.
fn to_f32_unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32 as f64).collect()
}

struct Generator<'a> {
    cfg: &'a ScenarioConfig,
    rng: ChaCha8Rng,
    next_id: u64,
}

impl Generator<'_> {
    fn spawn(&mut self, pose: &EgoPose, others: &[Actor]) -> Actor {
        let cfg = self.cfg;
        let r: f64 = self.rng.random();
        let motion = if r < cfg.motion_mix[0] {
            MotionModel::ConstantVelocity
        } else if r < cfg.motion_mix[0] + cfg.motion_mix[1] {
            MotionModel::ConstantTurn
        } else {
            MotionModel::Stationary
        };
        let category = Category::ALL[self.rng.random_range(0..3)];
        let base = typical_dims(category);
        let scale = self.rng.random_range(0.9..1.1);
        let dims = base.map(|v| v * scale);
        let (lo, hi) = speed_range(category);
        let speed = match motion {
            MotionModel::Stationary => 0.0,
            _ => self.rng.random_range(lo..hi),
        };
        let yaw_rate = match motion {
            MotionModel::ConstantTurn => {
                let w = self.rng.random_range(0.1..0.4);
                if self.rng.random_bool(0.5) {
                    w
                } else {
                    -w
                }
            }
            _ => 0.0,
        };
        let heading = self.rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let identity = unit_vector(&mut self.rng, cfg.d_reid);
        let mut x = 0.0;
        let mut y = 0.0;
        for _ in 0..64 {
            let ex = self.rng.random_range(8.0..45.0);
            let ylim = (ex * 0.9 * (cfg.camera.cx0 / cfg.camera.fx)).min(ARENA_Y - 1.0);
            let ey = self.rng.random_range(-ylim..ylim);
            let p = pose.transform_point([ex, ey, 0.0]);
            (x, y) = (p[0], p[1]);
            let clear = others
                .iter()
                .all(|o| ((o.x - x).powi(2) + (o.y - y).powi(2)).sqrt() > SPAWN_SEPARATION);
            if clear {
                break;
            }
        }
        let id = self.next_id;
        self.next_id += 1;
        Actor {
            id,
            category,
            motion,
            x,
            y,
            heading,
            speed,
            yaw_rate,
            dims,
            identity,
        }
    }

    fn detect(&mut self, a: &Actor, pose: &EgoPose) -> Option<Detection> {
        let cfg = self.cfg;
        let b = a.box3d();
        let noise = |rng: &mut ChaCha8Rng, s: f64| -> f64 {
            if s > 0.0 {
                Normal::new(0.0, s).expect("sigma validated").sample(rng)
            } else {
                0.0
            }
        };
        let nb = Box3D::new(
            b.x + noise(&mut self.rng, cfg.pos_noise_sigma),
            b.y + noise(&mut self.rng, cfg.pos_noise_sigma),
            b.z + noise(&mut self.rng, cfg.pos_noise_sigma),
            (b.l + noise(&mut self.rng, cfg.dim_noise_sigma)).max(0.1),
            (b.w + noise(&mut self.rng, cfg.dim_noise_sigma)).max(0.1),
            (b.h + noise(&mut self.rng, cfg.dim_noise_sigma)).max(0.1),
            b.yaw + noise(&mut self.rng, cfg.yaw_noise_sigma),
        )
        .expect("finite noisy box");
        let app: Vec<f64> = a
            .identity
            .iter()
            .map(|v| v + noise(&mut self.rng, cfg.reid_noise_sigma))
            .collect();
        let confidence = self.rng.random_range(0.5..=1.0);
        // A noisy box pushed out of view is simply not reported.
        let box2d = project_box(cfg, pose, &nb)?;
        Some(Detection {
            box2d,
            box3d: nb,
            category: a.category,
            confidence,
            appearance: to_f32_unit(&app),
            gt_id: Some(a.id),
        })
    }

    fn false_positive(&mut self, pose: &EgoPose) -> Option<Detection> {
        let category = Category::ALL[self.rng.random_range(0..3)];
        let dims = typical_dims(category);
        let ex = self.rng.random_range(8.0..45.0);
        let ylim = (ex * 0.9 * (self.cfg.camera.cx0 / self.cfg.camera.fx)).min(ARENA_Y - 1.0);
        let ey = self.rng.random_range(-ylim..ylim);
        let yaw = self.rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let confidence = self.rng.random_range(0.05..0.6);
        let appearance = to_f32_unit(&unit_vector(&mut self.rng, self.cfg.d_reid));
        let p = pose.transform_point([ex, ey, dims[2] / 2.0]);
        let b = Box3D::new(p[0], p[1], p[2], dims[0], dims[1], dims[2], yaw).ok()?;
        Some(Detection {
            box2d: project_box(self.cfg, pose, &b)?,
            box3d: b,
            category,
            confidence,
            appearance,
            gt_id: None,
        })
    }
}

/// Generates ground truth and detections for every frame.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut g = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        next_id: 0,
    };
    let mut actors: Vec<Actor> = Vec::with_capacity(cfg.n_objects);
    let pose0 = ego_pose(cfg, 0);
    for _ in 0..cfg.n_objects {
        let a = g.spawn(&pose0, &actors);
        actors.push(a);
    }
    let mut ground_truth = Vec::with_capacity(cfg.n_frames);
    let mut detections = Vec::with_capacity(cfg.n_frames);
    for f in 0..cfg.n_frames {
        let pose = ego_pose(cfg, f);
        if f > 0 {
            for a in actors.iter_mut() {
                a.advance(cfg.frame_dt);
            }
        }
        // Replace actors that left the view.
        for i in 0..actors.len() {
            if project_box(cfg, &pose, &actors[i].box3d()).is_none() {
                let others: Vec<Actor> = actors.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, a)| a.clone()).collect();
                let mut fresh = g.spawn(&pose, &others);
                let mut tries = 0;
                while project_box(cfg, &pose, &fresh.box3d()).is_none() && tries < 16 {
                    fresh = g.spawn(&pose, &others);
                    tries += 1;
                }
                actors[i] = fresh;
            }
        }
        let timestamp = f as f64 * cfg.frame_dt;
        let mut objects = Vec::with_capacity(actors.len());
        for a in &actors {
            let b = a.box3d();
            if let Some(b2) = project_box(cfg, &pose, &b) {
                objects.push(GroundTruthObject {
                    id: a.id,
                    box3d: b,
                    box2d: b2,
                    velocity: a.velocity(),
                    attribute: a.attribute(),
                    category: a.category,
                });
            }
        }
        let mut dets = Vec::new();
        for a in &actors {
            let dropped = g.rng.random_bool(cfg.dropout_prob);
            if dropped {
                continue;
            }
            if let Some(d) = g.detect(a, &pose) {
                dets.push(d);
            }
        }
        let n_fp = if cfg.fp_rate > 0.0 {
            let p: f64 = Poisson::new(cfg.fp_rate).expect("fp_rate validated").sample(&mut g.rng);
            p as usize
        } else {
            0
        };
        for _ in 0..n_fp {
            if let Some(d) = g.false_positive(&pose) {
                if dets.len() < cfg.k_max {
                    dets.push(d);
                }
            }
        }
        dets.shuffle(&mut g.rng);
        ground_truth.push(GroundTruthFrame {
            frame_index: f,
            timestamp,
            objects,
        });
        detections.push(DetectionFrame {
            frame_index: f,
            timestamp,
            detections: dets,
        });
    }
    Ok(Scenario {
        config: cfg.clone(),
        ground_truth,
        detections,
    })
}

/// Seed of scene `index` in a set derived from one base seed.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// Generates `count` scenes from one template. Scene `i` uses seed
/// `scene_seed(base_seed, i)` and an object count drawn uniformly from
/// `n_objects` (inclusive) by a generator seeded with `base_seed`.
pub fn generate_set(template: &ScenarioConfig, count: usize, n_objects: [usize; 2], base_seed: u64) -> Result<Vec<Scenario>> {
    if n_objects[0] > n_objects[1] {
        return Err(Error::config("object count range is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    let configs: Vec<ScenarioConfig> = (0..count)
        .map(|i| ScenarioConfig {
            n_objects: rng.random_range(n_objects[0]..=n_objects[1]),
            seed: scene_seed(base_seed, i),
            ..template.clone()
        })
        .collect();
    configs.iter().map(generate).collect()
}

/// Ground-truth association between two detection lists, padded to the
/// given slot counts. Detections sharing a hidden identity are matched;
/// everything else goes to the un-identified slot.
pub fn gt_association(
    cur: &[Detection],
    prev: &[Detection],
    cur_slots: usize,
    prev_slots: usize,
) -> Result<GroundTruthAssociation> {
    if cur.len() > cur_slots || prev.len() > prev_slots {
        return Err(Error::invalid("more detections than slots"));
    }
    let cur_valid: Vec<bool> = (0..cur_slots).map(|i| i < cur.len()).collect();
    let prev_valid: Vec<bool> = (0..prev_slots).map(|j| j < prev.len()).collect();
    let mut matches = Vec::new();
    for (i, d) in cur.iter().enumerate() {
        if let Some(id) = d.gt_id {
            if let Some(j) = prev.iter().position(|p| p.gt_id == Some(id)) {
                matches.push((i, j));
            }
        }
    }
    GroundTruthAssociation::from_matches(&cur_valid, &prev_valid, &matches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            n_frames: 12,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_detections_equal_ground_truth() {
        let s = generate(&small().noiseless()).unwrap();
        let mut app: std::collections::HashMap<u64, Vec<f64>> = Default::default();
        for (gt, det) in s.ground_truth.iter().zip(&s.detections) {
            assert_eq!(gt.objects.len(), det.detections.len());
            for d in &det.detections {
                let o = gt.object(d.gt_id.unwrap()).unwrap();
                assert_eq!(o.box3d, d.box3d);
                let prev = app.entry(o.id).or_insert_with(|| d.appearance.clone());
                assert_eq!(prev, &d.appearance);
            }
        }
    }

    #[test]
    fn seed_determinism() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = ScenarioConfig { seed: 43, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn full_dropout_leaves_only_false_positives() {
        let s = generate(&ScenarioConfig {
            dropout_prob: 1.0,
            ..small()
        })
        .unwrap();
        assert!(s.detections.iter().all(|f| f.detections.iter().all(|d| d.gt_id.is_none())));
    }

    #[test]
    fn too_many_objects_is_config_error() {
        let c = ScenarioConfig {
            n_objects: 17,
            ..small()
        };
        assert!(matches!(generate(&c), Err(Error::Config(_))));
    }

    #[test]
    fn gt_velocity_matches_position_differences() {
        let cfg = ScenarioConfig {
            motion_mix: [1.0, 0.0, 0.0],
            n_frames: 20,
            ..small().noiseless()
        };
        let s = generate(&cfg).unwrap();
        let mut checked = 0;
        for w in s.ground_truth.windows(2) {
            for o in &w[0].objects {
                if let Some(n) = w[1].object(o.id) {
                    for k in 0..2 {
                        let fd = (n.box3d.center()[k] - o.box3d.center()[k]) / cfg.frame_dt;
                        assert!((fd - o.velocity[k]).abs() < 1e-9);
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn attributes_follow_speed() {
        let s = generate(&ScenarioConfig { n_frames: 30, ..small() }).unwrap();
        for f in &s.ground_truth {
            for o in &f.objects {
                let v = (o.velocity[0].powi(2) + o.velocity[1].powi(2)).sqrt();
                assert_eq!(o.attribute == Attribute::Moving, v > MOVING_SPEED);
                if o.attribute == Attribute::Parked {
                    assert_eq!(o.category, Category::Car);
                }
            }
        }
    }

    #[test]
    fn appearance_is_unit_norm_and_counts_bounded() {
        let s = generate(&ScenarioConfig {
            fp_rate: 5.0,
            ..small()
        })
        .unwrap();
        for f in &s.detections {
            assert!(f.detections.len() <= 16);
            for d in &f.detections {
                let n: f64 = d.appearance.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
                assert!((0.0..=1.0).contains(&d.confidence));
            }
        }
    }

    #[test]
    fn association_of_identical_frames_is_identity() {
        let s = generate(&small().noiseless()).unwrap();
        let d = &s.detections[3].detections;
        let gt = gt_association(d, d, 16, 16).unwrap();
        for i in 0..d.len() {
            assert_eq!(gt.matrix.get(i, i), 1.0);
        }
        assert_eq!(gt.matches().len(), d.len());
    }

    #[test]
    fn association_births_and_dropouts() {
        let s = generate(&small().noiseless()).unwrap();
        let cur = &s.detections[5].detections;
        let gt = gt_association(cur, &[], cur.len(), 1).unwrap();
        for i in 0..cur.len() {
            assert_eq!(gt.matrix.get(i, 1), 1.0);
        }
        let mut prev = s.detections[4].detections.clone();
        let dropped_id = cur[0].gt_id;
        prev.retain(|d| d.gt_id != dropped_id);
        let gt = gt_association(cur, &prev, cur.len(), prev.len()).unwrap();
        assert_eq!(gt.matrix.get(0, prev.len()), 1.0);
    }

    #[test]
    fn moving_ego_keeps_objects_in_view() {
        let s = generate(&ScenarioConfig {
            ego_speed: 5.0,
            ..small().noiseless()
        })
        .unwrap();
        for (f, gt) in s.ground_truth.iter().enumerate() {
            let pose = ego_pose(&s.config, f);
            for o in &gt.objects {
                let c = pose.inverse().transform_point(o.box3d.center());
                assert!(c[0] >= ARENA_X[0] && c[0] <= ARENA_X[1]);
            }
        }
    }
}
