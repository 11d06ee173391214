//! Proxemic I/O candidates, input routing and latency compensation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Pose, Ray, Vec3};
use crate::ids::ElementId;
use crate::sim::Time;

pub const DEFAULT_ARM_LENGTH_M: f64 = 0.6;
pub const MAX_ENLARGEMENT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Zone {
    Intimate,
    Personal,
    Social,
    Public,
}

impl Zone {
    pub fn as_str(self) -> &'static str {
        match self {
            Zone::Intimate => "intimate",
            Zone::Personal => "personal",
            Zone::Social => "social",
            Zone::Public => "public",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneThresholds {
    pub intimate: f64,
    pub personal: f64,
    pub social: f64,
}

impl Default for ZoneThresholds {
    fn default() -> Self {
        ZoneThresholds { intimate: 0.45, personal: 1.2, social: 3.6 }
    }
}

impl ZoneThresholds {
    pub fn is_valid(&self) -> bool {
        0.0 < self.intimate && self.intimate < self.personal && self.personal < self.social
    }
}

/// Zone for a distance; each boundary belongs to the inner zone.
pub fn zone_for_distance(d: f64, t: &ZoneThresholds) -> Zone {
    if d <= t.intimate {
        Zone::Intimate
    } else if d <= t.personal {
        Zone::Personal
    } else if d <= t.social {
        Zone::Social
    } else {
        Zone::Public
    }
}

pub fn classify_zone(element_position: &Vec3, user: &Pose, t: &ZoneThresholds) -> Zone {
    zone_for_distance((element_position - user.position).norm(), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IoRoles {
    /// "clickable"
    pub input: bool,
    /// "to-be-augmented"
    pub output: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoCandidate {
    pub element: ElementId,
    pub zone: Zone,
    pub roles: IoRoles,
    pub bounds: Aabb,
}

/// Nearest input-capable candidate hit by the ray; ties go to the smaller id.
pub fn route_input(ray: &Ray, candidates: &[IoCandidate]) -> Option<ElementId> {
    candidates
        .iter()
        .filter(|c| c.roles.input)
        .filter_map(|c| c.bounds.ray_hit(ray).map(|t| (t, c.element)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// Target radius grown by the angular drift accumulated over the
/// motion-to-photon latency, capped at three times the base radius.
pub fn enlarge_target(base_radius_m: f64, angular_speed_rad_s: f64, mtp_latency_us: u64) -> f64 {
    enlarge_target_with_arm(base_radius_m, angular_speed_rad_s, mtp_latency_us, DEFAULT_ARM_LENGTH_M)
}

pub fn enlarge_target_with_arm(base_radius_m: f64, angular_speed_rad_s: f64, mtp_latency_us: u64, arm_m: f64) -> f64 {
    let grown = base_radius_m + angular_speed_rad_s * (mtp_latency_us as f64 / 1e6) * arm_m;
    grown.min(MAX_ENLARGEMENT * base_radius_m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingRecognition {
    pub request: u64,
    pub target: ElementId,
    pub submitted_at: Time,
    /// World-to-device transform at submission.
    pub pose_at_submit: Pose,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum CompensationError {
    #[error("request {request} is stale: a newer result for {target} was already applied")]
    StaleRequest { request: u64, target: ElementId },
}

/// Re-expresses a result computed in the submit-time device frame in the
/// current device frame. Device poses are world-to-device transforms, so
/// `adjusted = (now ∘ submit⁻¹) ∘ result`.
pub fn compensate(result_pose_at_submit: &Pose, pose_at_submit: &Pose, device_pose_now: &Pose) -> Pose {
    device_pose_now.compose(&pose_at_submit.inverse()).compose(result_pose_at_submit)
}

/// Applies each recognition result at most once and rejects results older than
/// one already applied for the same target.
#[derive(Debug, Clone, Default)]
pub struct RecognitionTracker {
    applied: BTreeMap<ElementId, (Time, u64)>,
}

impl RecognitionTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn compensate_recognition(
        &mut self,
        pending: &PendingRecognition,
        result_pose_at_submit: &Pose,
        device_pose_now: &Pose,
    ) -> Result<Pose, CompensationError> {
        if let Some((t, req)) = self.applied.get(&pending.target) {
            if (pending.submitted_at, pending.request) <= (*t, *req) {
                return Err(CompensationError::StaleRequest { request: pending.request, target: pending.target });
            }
        }
        self.applied.insert(pending.target, (pending.submitted_at, pending.request));
        Ok(compensate(result_pose_at_submit, &pending.pose_at_submit, device_pose_now))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn zones_with_inclusive_boundaries() {
        let t = ZoneThresholds::default();
        assert_eq!(zone_for_distance(0.3, &t), Zone::Intimate);
        assert_eq!(zone_for_distance(0.45, &t), Zone::Intimate);
        assert_eq!(zone_for_distance(1.2, &t), Zone::Personal);
        assert_eq!(zone_for_distance(3.6, &t), Zone::Social);
        assert_eq!(zone_for_distance(10.0, &t), Zone::Public);
        let user = Pose::identity();
        assert_eq!(classify_zone(&Vec3::new(0.0, 0.0, -1.0), &user, &t), Zone::Personal);
    }

    fn cand(id: u64, b: Aabb) -> IoCandidate {
        IoCandidate { element: ElementId(id), zone: Zone::Personal, roles: IoRoles { input: true, output: false }, bounds: b }
    }

    #[test]
    fn routing() {
        let ray = Ray::new(Vec3::zeros(), Vec3::new(0.0, 0.0, -1.0));
        let one = cand(1, Aabb::from_center([0.0, 0.0, -2.0], [0.1; 3]));
        assert_eq!(route_input(&ray, &[one]), Some(ElementId(1)));
        // nested boxes: outer entered at 1.5, inner at 1.9
        let outer = cand(5, Aabb::from_center([0.0, 0.0, -2.0], [0.5; 3]));
        let inner = cand(2, Aabb::from_center([0.0, 0.0, -2.0], [0.1; 3]));
        assert_eq!(route_input(&ray, &[inner, outer]), Some(ElementId(5)));
        let off = cand(3, Aabb::from_center([5.0, 0.0, -2.0], [0.1; 3]));
        assert_eq!(route_input(&ray, &[off]), None);
        let mut output_only = one;
        output_only.roles = IoRoles { input: false, output: true };
        assert_eq!(route_input(&ray, &[output_only]), None);
    }

    #[test]
    fn enlargement() {
        assert_eq!(enlarge_target(0.02, 1.0, 0), 0.02);
        assert_eq!(enlarge_target(0.02, 0.0, 1_000_000), 0.02);
        // 0.02 + 1 * 0.1 * 0.6 = 0.08, capped at 0.06
        assert!((enlarge_target(0.02, 1.0, 100_000) - 0.06).abs() < 1e-15);
        assert!((enlarge_target(0.1, 1.0, 100_000) - 0.16).abs() < 1e-12);
    }

    #[test]
    fn no_motion_is_identity() {
        let mut tr = RecognitionTracker::new();
        let device = Pose::from_yaw_pitch(Vec3::new(1.0, 1.6, 0.0), 0.4, 0.0);
        let result = Pose::new(Vec3::new(0.0, 0.0, -2.0), UnitQuaternion::identity());
        let p = PendingRecognition { request: 1, target: ElementId(9), submitted_at: 0, pose_at_submit: device };
        let adj = tr.compensate_recognition(&p, &result, &device).unwrap();
        assert!((adj.position - result.position).norm() < 1e-12);
        assert!(adj.angle_to(&result) < 1e-12);
        assert_eq!(
            tr.compensate_recognition(&p, &result, &device),
            Err(CompensationError::StaleRequest { request: 1, target: ElementId(9) })
        );
    }

    #[test]
    fn yaw_during_offload() {
        // ground-truth anchor in the world; view = world→device
        let anchor = Pose::new(Vec3::new(0.0, 0.0, -2.0), UnitQuaternion::identity());
        let view_submit = Pose::identity();
        let yaw = 10f64.to_radians();
        let view_now = Pose::from_yaw_pitch(Vec3::zeros(), yaw, 0.0);
        let result = view_submit.compose(&anchor);
        let adj = compensate(&result, &view_submit, &view_now);
        assert!((adj.angle_to(&result) - yaw).abs() < 1e-12);
        let truth = view_now.compose(&anchor);
        assert!(adj.angle_to(&truth) < 1e-12);
        assert!((adj.position - truth.position).norm() < 1e-12);
    }
}
