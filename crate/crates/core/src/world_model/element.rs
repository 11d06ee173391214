use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, Pose};
use crate::ids::ElementId;
use crate::sim::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    FeaturePoint,
    Plane,
    Anchor,
    SemanticObject,
}

impl ElementKind {
    pub const ALL: [ElementKind; 4] =
        [ElementKind::FeaturePoint, ElementKind::Plane, ElementKind::Anchor, ElementKind::SemanticObject];

    /// Rank used by the simplified local copy: higher is kept first.
    pub fn retention_rank(self) -> u8 {
        match self {
            ElementKind::Anchor => 3,
            ElementKind::Plane => 2,
            ElementKind::SemanticObject => 1,
            ElementKind::FeaturePoint => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::FeaturePoint => "FeaturePoint",
            ElementKind::Plane => "Plane",
            ElementKind::Anchor => "Anchor",
            ElementKind::SemanticObject => "SemanticObject",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ElementKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Sensitivity label carried with every element (the taint).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum Sensitivity {
    #[default]
    None,
    Private,
    Bystander,
}

impl Sensitivity {
    pub fn as_str(self) -> &'static str {
        match self {
            Sensitivity::None => "None",
            Sensitivity::Private => "Private",
            Sensitivity::Bystander => "Bystander",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "None" => Some(Sensitivity::None),
            "Private" => Some(Sensitivity::Private),
            "Bystander" => Some(Sensitivity::Bystander),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldElement {
    pub id: ElementId,
    pub kind: ElementKind,
    pub pose: Pose,
    pub extent: Aabb,
    pub source: String,
    pub timestamp: Time,
    pub sensitivity: Sensitivity,
    pub labels: Vec<String>,
    /// Set once the input layer has applied its redaction; user rules skip it afterwards.
    pub redacted: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ElementError {
    #[error("{0}: extent is not a valid box")]
    InvalidExtent(ElementId),
    #[error("{0}: {1:?} requires a non-degenerate extent")]
    Degenerate(ElementId, ElementKind),
    #[error("{0}: orientation quaternion is not normalized")]
    Unnormalized(ElementId),
    #[error("{id}: timestamp {timestamp} is ahead of the clock {now}")]
    FromFuture { id: ElementId, timestamp: Time, now: Time },
}

impl WorldElement {
    pub fn new(id: u64, kind: ElementKind, extent: Aabb, source: &str, timestamp: Time) -> Self {
        let c = extent.center();
        WorldElement {
            id: ElementId(id),
            kind,
            pose: Pose::new(c.into(), nalgebra::UnitQuaternion::identity()),
            extent,
            source: source.to_string(),
            timestamp,
            sensitivity: Sensitivity::None,
            labels: Vec::new(),
            redacted: false,
        }
    }

    pub fn with_sensitivity(mut self, s: Sensitivity) -> Self {
        self.sensitivity = s;
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.labels.push(label.to_string());
        self
    }

    pub fn with_pose(mut self, pose: Pose) -> Self {
        self.pose = pose;
        self
    }

    pub fn validate(&self, now: Time) -> Result<(), ElementError> {
        if !self.extent.is_valid() {
            return Err(ElementError::InvalidExtent(self.id));
        }
        let degenerate = match self.kind {
            ElementKind::Plane => self.extent.max_face_area() <= 0.0,
            ElementKind::SemanticObject => self.extent.volume() <= 0.0,
            _ => false,
        };
        if degenerate {
            return Err(ElementError::Degenerate(self.id, self.kind));
        }
        if !self.pose.is_normalized(1e-6) {
            return Err(ElementError::Unnormalized(self.id));
        }
        if self.timestamp > now {
            return Err(ElementError::FromFuture { id: self.id, timestamp: self.timestamp, now });
        }
        Ok(())
    }

    /// Total precedence order for conflicting versions of the same id:
    /// later timestamp wins, then the lexicographically smallest source, then a
    /// field-wise comparison so that the order is total.
    pub fn precedence(&self, other: &WorldElement) -> Ordering {
        self.timestamp
            .cmp(&other.timestamp)
            .then_with(|| other.source.cmp(&self.source))
            .then_with(|| content_cmp(other, self))
    }
}

fn floats_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn content_cmp(a: &WorldElement, b: &WorldElement) -> Ordering {
    let pa: Vec<f64> = a.pose.position_array().into_iter().chain(a.pose.quat_wxyz()).collect();
    let pb: Vec<f64> = b.pose.position_array().into_iter().chain(b.pose.quat_wxyz()).collect();
    a.kind
        .cmp(&b.kind)
        .then_with(|| floats_cmp(&pa, &pb))
        .then_with(|| floats_cmp(&a.extent.min, &b.extent.min))
        .then_with(|| floats_cmp(&a.extent.max, &b.extent.max))
        .then_with(|| a.sensitivity.cmp(&b.sensitivity))
        .then_with(|| a.labels.cmp(&b.labels))
        .then_with(|| a.redacted.cmp(&b.redacted))
}
