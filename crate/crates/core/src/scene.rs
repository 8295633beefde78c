//! Per-frame records shared by the simulator, the network, the tracker and
//! the file formats.

use serde::{Deserialize, Serialize};

use crate::geometry::{Box2D, Box3D};

/// Object class. The simulator uses the first three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Car,
    Pedestrian,
    Cyclist,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Car, Category::Pedestrian, Category::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Category::ALL.get(i).copied()
    }
}

/// Motion attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Moving,
    Stopped,
    Parked,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Moving, Attribute::Stopped, Attribute::Parked];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Attribute> {
        Attribute::ALL.get(i).copied()
    }
}

/// Speed above which an object counts as moving, m/s.
pub const MOVING_SPEED: f64 = 0.5;

/// One detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub box2d: Box2D,
    /// World frame.
    pub box3d: Box3D,
    pub category: Category,
    pub confidence: f64,
    /// Unit-norm appearance (re-identification) vector.
    pub appearance: Vec<f64>,
    /// Ground-truth identity, `None` for false positives. Never read by the
    /// tracker; used for supervision and evaluation only.
    pub gt_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub frame_index: usize,
    pub timestamp: f64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub id: u64,
    /// World frame.
    pub box3d: Box3D,
    pub box2d: Box2D,
    pub velocity: [f64; 3],
    pub attribute: Attribute,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub frame_index: usize,
    pub timestamp: f64,
    pub objects: Vec<GroundTruthObject>,
}

impl GroundTruthFrame {
    pub fn object(&self, id: u64) -> Option<&GroundTruthObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}

/// A tracker output for one object in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub track_id: u64,
    pub box3d: Box3D,
    pub box2d: Box2D,
    pub category: Category,
    pub confidence: f64,
    pub velocity: [f64; 3],
    pub attribute: Attribute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFrame {
    pub frame_index: usize,
    pub timestamp: f64,
    pub objects: Vec<TrackedObject>,
}
