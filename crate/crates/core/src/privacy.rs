//! Input protection layer, network sharing gate and output policy manager.
//!
//! Rules are evaluated in tiers: OS floor rules, then user rules, then context
//! rules; within a tier the first matching rule wins. The OS floor cannot be
//! overridden: bystander data never passes the input filter and Safety content
//! is never suppressed on output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::display::RenderItem;
use crate::geometry::Aabb;
use crate::ids::ElementId;
use crate::world_model::{DisplayPriority, Sensitivity, WorldElement};

pub const REDACTION_GRID_M: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrivacyError {
    #[error("taint violation: bystander-tagged element {0} reached the network gate")]
    TaintViolation(ElementId),
}

/// What an application is allowed to read from the world model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Clearance {
    #[default]
    Standard,
    Private,
}

impl Clearance {
    pub fn may_read(self, s: Sensitivity) -> bool {
        match s {
            Sensitivity::None => true,
            Sensitivity::Private => self == Clearance::Private,
            Sensitivity::Bystander => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleAction {
    Allow,
    Redact,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleMatch {
    Tag(Sensitivity),
    Label(String),
}

impl RuleMatch {
    fn matches(&self, e: &WorldElement) -> bool {
        match self {
            RuleMatch::Tag(t) => e.sensitivity == *t,
            RuleMatch::Label(l) => e.labels.iter().any(|x| x == l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRule {
    #[serde(rename = "match")]
    pub matcher: RuleMatch,
    pub action: RuleAction,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UserContext {
    Driving,
    Walking,
    Stationary,
    Custom(String),
}

impl UserContext {
    pub fn parse(s: &str) -> UserContext {
        match s {
            "Driving" => UserContext::Driving,
            "Walking" => UserContext::Walking,
            "Stationary" => UserContext::Stationary,
            other => UserContext::Custom(other.to_string()),
        }
    }
}

/// Output classes suppressed while `context` is active.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRule {
    pub context: UserContext,
    pub suppress: Vec<DisplayPriority>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySet {
    pub user_rules: Vec<UserRule>,
    pub context_rules: Vec<ContextRule>,
    pub data_share_ok: bool,
}

impl Default for PolicySet {
    fn default() -> Self {
        PolicySet {
            user_rules: Vec::new(),
            context_rules: vec![ContextRule {
                context: UserContext::Driving,
                suppress: vec![DisplayPriority::Normal, DisplayPriority::Ambient],
            }],
            data_share_ok: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub elements: Vec<WorldElement>,
    pub bystanders: Vec<Aabb>,
    pub context: UserContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditAction {
    DropBystander,
    DropRule,
    Redact,
    Withhold,
    Suppress,
    Unobscure,
}

impl AuditAction {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditAction::DropBystander => "drop_bystander",
            AuditAction::DropRule => "drop_rule",
            AuditAction::Redact => "redact",
            AuditAction::Withhold => "withhold",
            AuditAction::Suppress => "suppress",
            AuditAction::Unobscure => "unobscure",
        }
    }
}

/// One action taken by the layer on one item (element id or placement id).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditRecord {
    pub action: AuditAction,
    pub item: u64,
}

fn quantize(x: f64) -> f64 {
    (x / REDACTION_GRID_M).round() * REDACTION_GRID_M
}

/// Pose snapped to the redaction grid (extent moves with it), labels stripped,
/// tag raised to Private.
pub fn redact(e: &WorldElement) -> WorldElement {
    let p = e.pose.position_array();
    let q = p.map(quantize);
    let mut out = e.clone();
    out.pose.position = q.into();
    out.extent = e.extent.translated([q[0] - p[0], q[1] - p[1], q[2] - p[2]]);
    out.labels.clear();
    out.sensitivity = Sensitivity::Private;
    out.redacted = true;
    out
}

fn in_bystander_region(e: &WorldElement, regions: &[Aabb]) -> bool {
    e.sensitivity == Sensitivity::Bystander || regions.iter().any(|r| r.intersects(&e.extent))
}

/// Cleans a raw sensor frame. The returned frame never carries Bystander-tagged
/// elements nor elements touching a bystander region.
pub fn filter_input(frame: &SensorFrame, policy: &PolicySet) -> (SensorFrame, Vec<AuditRecord>) {
    let mut audit = Vec::new();
    let mut kept = Vec::with_capacity(frame.elements.len());
    for e in &frame.elements {
        if in_bystander_region(e, &frame.bystanders) {
            audit.push(AuditRecord { action: AuditAction::DropBystander, item: e.id.0 });
            continue;
        }
        let action = if e.redacted {
            None
        } else {
            policy.user_rules.iter().find(|r| r.matcher.matches(e)).map(|r| r.action)
        };
        let out = match action {
            Some(RuleAction::Drop) => {
                audit.push(AuditRecord { action: AuditAction::DropRule, item: e.id.0 });
                continue;
            }
            Some(RuleAction::Redact) => {
                audit.push(AuditRecord { action: AuditAction::Redact, item: e.id.0 });
                redact(e)
            }
            Some(RuleAction::Allow) | None => e.clone(),
        };
        // snapping can move an element into a bystander region
        if in_bystander_region(&out, &frame.bystanders) {
            audit.push(AuditRecord { action: AuditAction::DropBystander, item: e.id.0 });
            continue;
        }
        kept.push(out);
    }
    let cleaned = SensorFrame { elements: kept, bystanders: frame.bystanders.clone(), context: frame.context.clone() };
    (cleaned, audit)
}

/// Subset of `outbound` allowed off the device. Private elements are withheld
/// unless the user agreed to share data.
pub fn gate_network_share(
    outbound: &[WorldElement],
    policy: &PolicySet,
) -> Result<(Vec<WorldElement>, Vec<AuditRecord>), PrivacyError> {
    if let Some(bad) = outbound.iter().find(|e| e.sensitivity == Sensitivity::Bystander) {
        return Err(PrivacyError::TaintViolation(bad.id));
    }
    let mut audit = Vec::new();
    let mut out = Vec::with_capacity(outbound.len());
    for e in outbound {
        if e.sensitivity == Sensitivity::Private && !policy.data_share_ok {
            audit.push(AuditRecord { action: AuditAction::Withhold, item: e.id.0 });
        } else {
            out.push(e.clone());
        }
    }
    Ok((out, audit))
}

/// Applies context rules to non-Safety items and removes any item whose
/// bounds overlap a declared safety-critical physical object.
pub fn filter_output(
    render: &[RenderItem],
    context: &UserContext,
    policy: &PolicySet,
    safety_objects: &[Aabb],
) -> (Vec<RenderItem>, Vec<AuditRecord>) {
    let suppressed: &[DisplayPriority] = policy
        .context_rules
        .iter()
        .find(|r| &r.context == context)
        .map(|r| r.suppress.as_slice())
        .unwrap_or(&[]);
    let mut audit = Vec::new();
    let mut out = Vec::with_capacity(render.len());
    for item in render {
        if item.priority == DisplayPriority::Safety {
            out.push(item.clone());
            continue;
        }
        if safety_objects.iter().any(|o| o.overlaps(&item.bounds)) {
            audit.push(AuditRecord { action: AuditAction::Unobscure, item: u64::from(item.placement.0) });
            continue;
        }
        if suppressed.contains(&item.priority) {
            audit.push(AuditRecord { action: AuditAction::Suppress, item: u64::from(item.placement.0) });
            continue;
        }
        out.push(item.clone());
    }
    (out, audit)
}
