//! Spatial primitives shared by every module: boxes, poses, view frusta and rays.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Axis-aligned bounding box in world metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    pub fn cube(min: f64, max: f64) -> Self {
        Aabb::new([min; 3], [max; 3])
    }

    pub fn from_center(center: [f64; 3], half: [f64; 3]) -> Self {
        Aabb::new(
            [center[0] - half[0], center[1] - half[1], center[2] - half[2]],
            [center[0] + half[0], center[1] + half[1], center[2] + half[2]],
        )
    }

    pub fn point(p: [f64; 3]) -> Self {
        Aabb::new(p, p)
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] <= self.max[i])
    }

    pub fn size(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn volume(&self) -> f64 {
        let s = self.size();
        s[0] * s[1] * s[2]
    }

    /// Largest face area; positive for planes and solids.
    pub fn max_face_area(&self) -> f64 {
        let s = self.size();
        (s[0] * s[1]).max(s[1] * s[2]).max(s[0] * s[2])
    }

    /// Closed intersection: touching faces count.
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    /// Open intersection: the shared region has positive volume.
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.min[i] && other.max[i] <= self.max[i])
    }

    pub fn contains_point(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }

    pub fn translated(&self, d: [f64; 3]) -> Aabb {
        Aabb::new(
            [self.min[0] + d[0], self.min[1] + d[1], self.min[2] + d[2]],
            [self.max[0] + d[0], self.max[1] + d[1], self.max[2] + d[2]],
        )
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        Aabb::new(
            [self.min[0] - margin, self.min[1] - margin, self.min[2] - margin],
            [self.max[0] + margin, self.max[1] + margin, self.max[2] + margin],
        )
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        for i in 0..3 {
            out.min[i] = out.min[i].min(other.min[i]);
            out.max[i] = out.max[i].max(other.max[i]);
        }
        out
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (k, c) in out.iter_mut().enumerate() {
            *c = Vec3::new(
                if k & 1 == 0 { self.min[0] } else { self.max[0] },
                if k & 2 == 0 { self.min[1] } else { self.max[1] },
                if k & 4 == 0 { self.min[2] } else { self.max[2] },
            );
        }
        out
    }

    /// Euclidean distance from `p` to the closest point of the box (0 inside).
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let mut acc = 0.0;
        for i in 0..3 {
            let d = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Slab test. Returns the entry distance along the ray (0 when the origin is inside).
    pub fn ray_hit(&self, ray: &Ray) -> Option<f64> {
        let mut t_min = 0.0_f64;
        let mut t_max = f64::INFINITY;
        for i in 0..3 {
            let o = ray.origin[i];
            let d = ray.dir[i];
            if d.abs() < 1e-15 {
                if o < self.min[i] || o > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let mut t0 = (self.min[i] - o) * inv;
            let mut t1 = (self.max[i] - o) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_min = t_min.max(t0);
            t_max = t_max.min(t1);
            if t_min > t_max {
                return None;
            }
        }
        Some(t_min)
    }
}

/// Rigid pose: translation plus unit quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose { position: Vec3::zeros(), orientation: UnitQuaternion::identity() }
    }

    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Pose { position, orientation }
    }

    /// Builds a pose from yaw (about +y) and pitch (about the local x axis), radians.
    pub fn from_yaw_pitch(position: Vec3, yaw: f64, pitch: f64) -> Self {
        let q = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), yaw)
            * UnitQuaternion::from_axis_angle(&Vec3::x_axis(), pitch);
        Pose::new(position, q)
    }

    /// Builds a pose from a raw `[w, x, y, z]` quaternion, normalizing it.
    pub fn from_raw(position: [f64; 3], quat_wxyz: [f64; 4]) -> Self {
        let q = nalgebra::Quaternion::new(quat_wxyz[0], quat_wxyz[1], quat_wxyz[2], quat_wxyz[3]);
        Pose::new(Vec3::from(position), UnitQuaternion::from_quaternion(q))
    }

    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn position_array(&self) -> [f64; 3] {
        [self.position.x, self.position.y, self.position.z]
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Pose::new(iso.translation.vector, iso.rotation)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    pub fn inverse(&self) -> Pose {
        Pose::from_isometry(&self.to_isometry().inverse())
    }

    /// Forward viewing direction: local -z.
    pub fn forward(&self) -> Vec3 {
        self.orientation * Vec3::new(0.0, 0.0, -1.0)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        (self.to_isometry() * Point3::from(*p)).coords
    }

    /// Angle in radians between two orientations.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.orientation.angle_to(&other.orientation)
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.orientation.quaternion().norm() - 1.0).abs() <= tol
    }
}

/// Rectangular view pyramid attached to the user's head pose, looking down local -z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frustum {
    pub eye: Pose,
    pub half_h: f64,
    pub half_v: f64,
    pub near: f64,
    pub far: f64,
}

impl Frustum {
    pub fn new(eye: Pose, h_fov_deg: f64, v_fov_deg: f64, near: f64, far: f64) -> Self {
        Frustum {
            eye,
            half_h: (h_fov_deg * 0.5).to_radians(),
            half_v: (v_fov_deg * 0.5).to_radians(),
            near,
            far,
        }
    }

    /// Inward-facing planes (normal, offset) in world space: `n·p + d ≥ 0` inside.
    fn planes(&self) -> [(Vec3, f64); 6] {
        let (th, tv) = (self.half_h.tan(), self.half_v.tan());
        // local frame: looking down -z
        let local = [
            (Vec3::new(0.0, 0.0, -1.0), -self.near),
            (Vec3::new(0.0, 0.0, 1.0), self.far),
            (Vec3::new(1.0, 0.0, -th).normalize(), 0.0),
            (Vec3::new(-1.0, 0.0, -th).normalize(), 0.0),
            (Vec3::new(0.0, 1.0, -tv).normalize(), 0.0),
            (Vec3::new(0.0, -1.0, -tv).normalize(), 0.0),
        ];
        let mut out = [(Vec3::zeros(), 0.0); 6];
        for (o, (n, d)) in out.iter_mut().zip(local) {
            let nw = self.eye.orientation * n;
            *o = (nw, d - nw.dot(&self.eye.position));
        }
        out
    }

    /// World-space corners of the pyramid (near then far).
    pub fn corners(&self) -> [Vec3; 8] {
        let (th, tv) = (self.half_h.tan(), self.half_v.tan());
        let mut out = [Vec3::zeros(); 8];
        let mut k = 0;
        for dist in [self.near, self.far] {
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    let local = Vec3::new(sx * th * dist, sy * tv * dist, -dist);
                    out[k] = self.eye.transform_point(&local);
                    k += 1;
                }
            }
        }
        out
    }

    /// Conservative-free box test: frustum planes against box corners, then box faces
    /// against frustum corners.
    pub fn intersects_aabb(&self, b: &Aabb) -> bool {
        let corners = b.corners();
        for (n, d) in self.planes() {
            if corners.iter().all(|c| n.dot(c) + d < 0.0) {
                return false;
            }
        }
        let fc = self.corners();
        for i in 0..3 {
            if fc.iter().all(|c| c[i] < b.min[i]) || fc.iter().all(|c| c[i] > b.max[i]) {
                return false;
            }
        }
        true
    }

    /// Whether a world-space direction from the eye lies inside the angular extent.
    pub fn contains_direction(&self, dir_world: &Vec3) -> bool {
        let local = self.eye.orientation.inverse() * dir_world;
        if local.z >= 0.0 {
            return false;
        }
        let z = -local.z;
        (local.x / z).abs() <= self.half_h.tan() && (local.y / z).abs() <= self.half_v.tan()
    }

    /// Solid angle of the rectangular pyramid in steradians.
    pub fn solid_angle(&self) -> f64 {
        4.0 * (self.half_h.sin() * self.half_v.sin()).asin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Ray { origin, dir: dir.normalize() }
    }
}
