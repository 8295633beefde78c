//! Boxes, corner layouts, pinhole projection and rigid frame changes.
//!
//! Conventions: world and ego frames are z-up, yaw is measured about +z and
//! the box length runs along the heading. Extents are stored as full sizes.
//! The camera frame is x-right, y-down, z-forward.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid may return exactly 2*pi for tiny negative inputs.
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Axis-aligned image box, center plus full extents in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Box2D {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Box2D { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !all_finite(&[self.cx, self.cy, self.w, self.h]) {
            return Err(Error::invalid("box2d has non-finite values"));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid(format!(
                "box2d extents must be positive, got w={} h={}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// Axis-aligned hull of a set of pixel points.
    pub fn hull(points: &[[f64; 2]]) -> Result<Self> {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        Box2D::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }
}

/// Oriented 3D box: center, full extents (l along heading, w lateral, h
/// vertical) and yaw about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box3D {
    /// Builds a box, normalizing yaw into `(-pi, pi]`.
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, yaw: f64) -> Result<Self> {
        let b = Box3D {
            x,
            y,
            z,
            l,
            w,
            h,
            yaw: normalize_angle(yaw),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(a: [f64; 7]) -> Result<Self> {
        Box3D::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.l, self.w, self.h, self.yaw]
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn validate(&self) -> Result<()> {
        if !all_finite(&self.to_array()) {
            return Err(Error::invalid("box3d has non-finite values"));
        }
        if self.l <= 0.0 || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid(format!(
                "box3d extents must be positive, got l={} w={} h={}",
                self.l, self.w, self.h
            )));
        }
        if !(self.yaw > -PI && self.yaw <= PI) {
            return Err(Error::invalid(format!("yaw {} outside (-pi, pi]", self.yaw)));
        }
        Ok(())
    }

    pub fn translated(&self, t: [f64; 3]) -> Box3D {
        Box3D {
            x: self.x + t[0],
            y: self.y + t[1],
            z: self.z + t[2],
            ..*self
        }
    }
}

/// Sign pattern of the four 2D corners: (-,-), (-,+), (+,+), (+,-).
pub const CORNER2D_SIGNS: [[f64; 2]; 4] = [[-1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [1.0, -1.0]];

/// Sign pattern of the eight 3D corners over (l, w, h), binary counting with
/// the length axis most significant.
pub const CORNER3D_SIGNS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, -1.0],
    [1.0, 1.0, 1.0],
];

pub fn corners2d(b: &Box2D) -> Result<[[f64; 2]; 4]> {
    b.validate()?;
    let mut out = [[0.0; 2]; 4];
    for (c, s) in out.iter_mut().zip(CORNER2D_SIGNS.iter()) {
        c[0] = b.cx + s[0] * b.w / 2.0;
        c[1] = b.cy + s[1] * b.h / 2.0;
    }
    Ok(out)
}

pub fn corners3d(b: &Box3D) -> Result<[[f64; 3]; 8]> {
    b.validate()?;
    Ok(corners3d_unchecked(b.to_array()))
}

/// Corner layout for raw parameters `[x, y, z, l, w, h, yaw]` without the
/// positivity checks. Used on refined boxes during training.
pub fn corners3d_unchecked(p: [f64; 7]) -> [[f64; 3]; 8] {
    let (s, c) = p[6].sin_cos();
    let mut out = [[0.0; 3]; 8];
    for (corner, sign) in out.iter_mut().zip(CORNER3D_SIGNS.iter()) {
        let ox = sign[0] * p[3] / 2.0;
        let oy = sign[1] * p[4] / 2.0;
        let oz = sign[2] * p[5] / 2.0;
        corner[0] = p[0] + c * ox - s * oy;
        corner[1] = p[1] + s * ox + c * oy;
        corner[2] = p[2] + oz;
    }
    out
}

/// Ground-plane distance between box centers.
pub fn bev_center_distance(a: &Box3D, b: &Box3D) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx0: f64,
    pub cy0: f64,
    pub image_w: f64,
    pub image_h: f64,
}

const MIN_DEPTH: f64 = 1e-6;

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx0 >= 0.0 && self.cx0 <= self.image_w && self.cy0 >= 0.0 && self.cy0 <= self.image_h) {
            return Err(Error::invalid("principal point outside image"));
        }
        Ok(())
    }

    pub fn project(&self, p: [f64; 3]) -> Result<[f64; 2]> {
        if !all_finite(&p) {
            return Err(Error::invalid("non-finite point"));
        }
        if p[2] <= MIN_DEPTH {
            return Err(Error::BehindCamera { z: p[2] });
        }
        Ok([self.fx * p[0] / p[2] + self.cx0, self.fy * p[1] / p[2] + self.cy0])
    }

    /// Back-projects a pixel at a known depth along the optical axis.
    pub fn unproject(&self, uv: [f64; 2], depth: f64) -> [f64; 3] {
        [
            (uv[0] - self.cx0) * depth / self.fx,
            (uv[1] - self.cy0) * depth / self.fy,
            depth,
        ]
    }

    pub fn contains(&self, uv: [f64; 2]) -> bool {
        uv[0] >= 0.0 && uv[0] <= self.image_w && uv[1] >= 0.0 && uv[1] <= self.image_h
    }
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            fx: 600.0,
            fy: 600.0,
            cx0: 800.0,
            cy0: 450.0,
            image_w: 1600.0,
            image_h: 900.0,
        }
    }
}

pub type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t[j][i] = *v;
        }
    }
    t
}

/// Rigid transform from the ego frame into the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    pub rotation: Mat3,
    pub translation: [f64; 3],
}

impl EgoPose {
    pub fn identity() -> Self {
        EgoPose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Planar pose: rotation about +z by `heading`, then translation.
    pub fn from_heading(heading: f64, translation: [f64; 3]) -> Self {
        let (s, c) = heading.sin_cos();
        EgoPose {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if !r.iter().flatten().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("pose has non-finite values"));
        }
        let rt = transpose(r);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rt[i][k] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(Error::invalid("pose rotation is not orthonormal"));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("pose rotation has determinant != 1"));
        }
        Ok(())
    }

    /// Heading of the ego x-axis in the world frame.
    pub fn heading(&self) -> f64 {
        self.rotation[1][0].atan2(self.rotation[0][0])
    }

    pub fn inverse(&self) -> EgoPose {
        let rt = transpose(&self.rotation);
        let t = mat_vec(&rt, self.translation);
        EgoPose {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = mat_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        mat_vec(&self.rotation, v)
    }
}

/// Moves a box from the ego frame into the world frame.
pub fn to_world(pose: &EgoPose, b: &Box3D) -> Result<Box3D> {
    pose.validate()?;
    b.validate()?;
    let c = pose.transform_point(b.center());
    Box3D::new(c[0], c[1], c[2], b.l, b.w, b.h, b.yaw + pose.heading())
}
