//! Scenario documents.
//!
//! A scenario is a header line `xros-scenario v1` followed by a TOML body of
//! key/value sections and tables. Loading validates every cross-reference and
//! reports all problems at once, each naming its field path.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::display::DisplayBudget;
use crate::geometry::{Aabb, Pose, Vec3};
use crate::ids::ElementId;
use crate::interaction::{IoRoles, ZoneThresholds};
use crate::network::LinkState;
use crate::offloading::{DeviceSpec, NetworkType, Placement, ServerSpec, Tier, UserPrefs, DEFAULT_MIGRATION_US};
use crate::privacy::{Clearance, PolicySet};
use crate::scheduler::{ModelMode, MotionCondition, RebindModel, RecoveryModel, DEFAULT_NEAR_DISTANCE_M};
use crate::sim::Time;
use crate::world_model::{DisplayPriority, ElementKind, Sensitivity, WorldElement};

pub const SCENARIO_HEADER: &str = "xros-scenario v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    /// `line` is 0 when the error only shows up after overrides are applied.
    #[error("{}{message}", if *line > 0 { format!("line {line}: ") } else { String::new() })]
    Parse { line: usize, message: String },
    #[error("invalid scenario:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<FieldError>),
    #[error("override `{0}`: {1}")]
    Override(String, String),
}

fn default_frame_rate() -> u32 {
    60
}
fn default_sensor_period() -> Time {
    33_333
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxSpec {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.min, self.max)
    }
}

impl From<Aabb> for BoxSpec {
    fn from(b: Aabb) -> Self {
        BoxSpec { min: b.min, max: b.max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
}

impl PoseSpec {
    pub fn pose(&self) -> Pose {
        Pose::from_yaw_pitch(Vec3::from(self.position), self.yaw_deg.to_radians(), self.pitch_deg.to_radians())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    pub near_m: f64,
    pub far_m: f64,
    pub start: PoseSpec,
    #[serde(default = "default_sensor_range")]
    pub sensor_range_m: f64,
}

fn default_sensor_range() -> f64 {
    10.0
}

impl Default for ViewSpec {
    fn default() -> Self {
        ViewSpec {
            h_fov_deg: 90.0,
            v_fov_deg: 60.0,
            near_m: 0.05,
            far_m: 50.0,
            start: PoseSpec { position: [0.0, 1.6, 0.0], yaw_deg: 0.0, pitch_deg: 0.0 },
            sensor_range_m: default_sensor_range(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSpec {
    pub near_distance_m: f64,
    pub recovery: RecoveryModel,
    pub rebind: RebindModel,
}

impl Default for SchedulerSpec {
    fn default() -> Self {
        SchedulerSpec { near_distance_m: DEFAULT_NEAR_DISTANCE_M, recovery: RecoveryModel::default(), rebind: RebindModel::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisplaySpec {
    pub max_items: usize,
    pub max_solid_angle: f64,
    pub base_target_radius_m: f64,
    pub scanout_us: u64,
}

impl Default for DisplaySpec {
    fn default() -> Self {
        let b = DisplayBudget::default();
        DisplaySpec { max_items: b.max_items, max_solid_angle: b.max_solid_angle, base_target_radius_m: 0.05, scanout_us: 4_000 }
    }
}

impl DisplaySpec {
    pub fn budget(&self) -> DisplayBudget {
        DisplayBudget { max_items: self.max_items, max_solid_angle: self.max_solid_angle }
    }
}

/// Energy charges in millijoules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySpec {
    pub compute_per_activation_mj: f64,
    pub message_mj: f64,
    pub radio_per_byte_mj: f64,
    pub local_task_mj: f64,
    pub battery_capacity_mj: f64,
}

impl Default for EnergySpec {
    fn default() -> Self {
        EnergySpec {
            compute_per_activation_mj: 0.5,
            message_mj: 0.01,
            radio_per_byte_mj: 0.0001,
            local_task_mj: 25.0,
            battery_capacity_mj: 36_000_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSpec {
    pub anchor: u64,
    pub bounds: BoxSpec,
    #[serde(default = "default_priority")]
    pub priority: DisplayPriority,
    #[serde(default = "default_relevance")]
    pub relevance: f64,
}

fn default_priority() -> DisplayPriority {
    DisplayPriority::Normal
}
fn default_relevance() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub id: u32,
    pub demand_us: u64,
    #[serde(default)]
    pub clearance: Clearance,
    pub lease: BoxSpec,
    /// `local`, `edge:<server>` or `cloud:<server>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin: Option<String>,
    #[serde(default)]
    pub placements: Vec<PlacementSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    pub id: u64,
    pub kind: ElementKind,
    pub extent: BoxSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 3]>,
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default)]
    pub sensitivity: Sensitivity,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub source: Option<String>,
}

impl ElementSpec {
    pub fn element(&self, timestamp: Time) -> WorldElement {
        let extent = self.extent.aabb();
        let pos = self.position.unwrap_or_else(|| extent.center());
        WorldElement {
            id: ElementId(self.id),
            kind: self.kind,
            pose: Pose::from_yaw_pitch(Vec3::from(pos), self.yaw_deg.to_radians(), 0.0),
            extent,
            source: self.source.clone().unwrap_or_else(|| "device".to_string()),
            timestamp,
            sensitivity: self.sensitivity,
            labels: self.labels.clone(),
            redacted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub t_us: Time,
    #[serde(flatten)]
    pub pose: PoseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    pub t_us: Time,
    pub from: u32,
    pub to: u32,
    #[serde(default = "default_condition")]
    pub condition: MotionCondition,
}

fn default_condition() -> MotionCondition {
    MotionCondition::Static
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskStream {
    pub app: u32,
    pub start_us: Time,
    pub period_us: Time,
    pub count: u64,
    pub exec_us_local: u64,
    pub payload_bytes: u64,
    pub result_bytes: u64,
    pub deadline_us: u64,
    #[serde(default)]
    pub confidential: bool,
    /// World element whose pose the task recognises (enables overlay compensation).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recognition_target: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    #[serde(default)]
    pub servers: Vec<ServerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: String,
    #[serde(flatten)]
    pub state: LinkState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub kind: NetworkType,
    /// Default access link; cells may override it.
    pub link: String,
    #[serde(default = "default_initial_cell")]
    pub initial_cell: String,
    #[serde(default = "default_fec_k")]
    pub fec_k: u32,
    #[serde(default)]
    pub quality_ladder: Vec<u64>,
}

fn default_initial_cell() -> String {
    String::new()
}
fn default_fec_k() -> u32 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffloadSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_migration")]
    pub migration_us: u64,
}

fn default_migration() -> u64 {
    DEFAULT_MIGRATION_US
}

impl Default for OffloadSection {
    fn default() -> Self {
        OffloadSection { enabled: true, migration_us: DEFAULT_MIGRATION_US }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandoverSpec {
    pub t_us: Time,
    pub cell: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSpec {
    pub t_us: Time,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BystanderSpec {
    pub t_us: Time,
    pub duration_us: Time,
    pub region: BoxSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub t_us: Time,
    pub origin: [f64; 3],
    pub direction: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub element: u64,
    #[serde(flatten)]
    pub roles: IoRoles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerSpec {
    pub source: String,
    pub elements: Vec<ElementSpec>,
    #[serde(default)]
    pub timestamp_us: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncSection {
    pub period_us: Time,
    #[serde(default = "default_sync_budget")]
    pub budget: usize,
    #[serde(default = "default_element_bytes")]
    pub element_bytes: u64,
    #[serde(default)]
    pub peers: Vec<PeerSpec>,
}

fn default_sync_budget() -> usize {
    64
}
fn default_element_bytes() -> u64 {
    256
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebugSection {
    /// Pushes a Bystander-tagged element past the input layer at this time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject_taint_us: Option<Time>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration_us: Time,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: u32,
    #[serde(default)]
    pub mode: ModelMode,
    #[serde(default = "default_sensor_period")]
    pub sensor_period_us: Time,
    #[serde(default)]
    pub view: ViewSpec,
    #[serde(default)]
    pub scheduler: SchedulerSpec,
    #[serde(default)]
    pub display: DisplaySpec,
    #[serde(default)]
    pub zones: ZoneThresholds,
    #[serde(default)]
    pub energy: EnergySpec,
    pub device: DeviceSpec,
    #[serde(default)]
    pub user_prefs: UserPrefs,
    pub network: NetworkSection,
    #[serde(default)]
    pub offloading: OffloadSection,
    #[serde(default)]
    pub policy: PolicySet,
    #[serde(default)]
    pub apps: Vec<AppSpec>,
    #[serde(default)]
    pub world: Vec<ElementSpec>,
    /// Optional `XROSWM v1` file with additional initial elements, resolved
    /// relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_store: Option<String>,
    #[serde(default)]
    pub motion: Vec<MotionSample>,
    #[serde(default)]
    pub switches: Vec<SwitchSpec>,
    #[serde(default)]
    pub tasks: Vec<TaskStream>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub cells: Vec<CellSpec>,
    #[serde(default)]
    pub cloud: Vec<ServerSpec>,
    #[serde(default)]
    pub handovers: Vec<HandoverSpec>,
    #[serde(default)]
    pub contexts: Vec<ContextSpec>,
    #[serde(default)]
    pub bystanders: Vec<BystanderSpec>,
    #[serde(default)]
    pub safety_objects: Vec<BoxSpec>,
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub candidates: Vec<CandidateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync: Option<SyncSection>,
    #[serde(default)]
    pub debug: DebugSection,
}

/// Parses `local`, `edge:<id>` or `cloud:<id>`.
pub fn parse_pin(s: &str) -> Option<Placement> {
    if s == "local" {
        return Some(Placement::Local);
    }
    let (tier, id) = s.split_once(':')?;
    if id.is_empty() {
        return None;
    }
    match tier {
        "edge" => Some(Placement::Edge(id.to_string())),
        "cloud" => Some(Placement::Cloud(id.to_string())),
        _ => None,
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn split_header(text: &str) -> Result<&str, ScenarioError> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim_end() != SCENARIO_HEADER {
        return Err(ScenarioError::Parse { line: 1, message: format!("expected header `{SCENARIO_HEADER}`") });
    }
    Ok(rest)
}

fn scalar_from_str(raw: &str, like: Option<&toml::Value>) -> toml::Value {
    use toml::Value;
    match like {
        Some(Value::Float(_)) => raw.parse::<f64>().map(Value::Float).unwrap_or_else(|_| Value::String(raw.into())),
        Some(Value::String(_)) => Value::String(raw.into()),
        _ => {
            if let Ok(i) = raw.parse::<i64>() {
                Value::Integer(i)
            } else if let Ok(f) = raw.parse::<f64>() {
                Value::Float(f)
            } else if let Ok(b) = raw.parse::<bool>() {
                Value::Boolean(b)
            } else {
                Value::String(raw.into())
            }
        }
    }
}

fn child<'a>(v: &'a mut toml::Value, key: &str) -> Option<&'a mut toml::Value> {
    match v {
        toml::Value::Table(t) => {
            if key.parse::<usize>().is_ok() {
                t.get_mut(key)
            } else {
                // sections left at their defaults are created on demand
                Some(t.entry(key).or_insert_with(|| toml::Value::Table(toml::Table::new())))
            }
        }
        toml::Value::Array(a) => key.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
        _ => None,
    }
}

/// Sets a scalar at a dotted path (`network.fec_k`, `links.0.loss_p`).
/// Missing keys and sections are added, so defaulted fields can be set too;
/// array elements must exist, and tables and arrays cannot be replaced.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<(), ScenarioError> {
    let err = |m: String| ScenarioError::Override(assignment.to_string(), m);
    let (path, raw) = assignment.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
    let parts: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = root;
    for p in parents {
        cur = child(cur, p).ok_or_else(|| err(format!("no such field `{p}`")))?;
    }
    let raw = raw.trim();
    match cur {
        toml::Value::Table(t) => match t.get(*last) {
            Some(toml::Value::Table(_) | toml::Value::Array(_)) => Err(err("not a scalar field".into())),
            existing => {
                let v = scalar_from_str(raw, existing);
                t.insert((*last).to_string(), v);
                Ok(())
            }
        },
        toml::Value::Array(a) => match last.parse::<usize>().ok().and_then(|i| a.get_mut(i)) {
            Some(slot) if !matches!(slot, toml::Value::Table(_) | toml::Value::Array(_)) => {
                *slot = scalar_from_str(raw, Some(slot));
                Ok(())
            }
            _ => Err(err("not a scalar field".into())),
        },
        _ => Err(err("parent is not a table".into())),
    }
}

impl Scenario {
    /// Parses a scenario document without touching the filesystem.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Scenario, ScenarioError> {
        let body = split_header(text)?;
        let parse_err = |e: toml::de::Error| ScenarioError::Parse {
            line: e.span().map(|s| line_of(body, s.start) + 1).unwrap_or(1),
            message: e.message().to_string(),
        };
        let scenario: Scenario = if overrides.is_empty() {
            toml::from_str(body).map_err(parse_err)?
        } else {
            let mut root = toml::Value::Table(body.parse::<toml::Table>().map_err(parse_err)?);
            for o in overrides {
                apply_override(&mut root, o)?;
            }
            root.try_into().map_err(|e: toml::de::Error| ScenarioError::Parse { line: 0, message: e.message().to_string() })?
        };
        scenario.validate().map_err(ScenarioError::Validation)?;
        Ok(scenario)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Scenario::parse(&text, overrides)
    }

    pub fn to_document(&self) -> String {
        let body = toml::to_string(self).expect("scenario serializes to TOML");
        format!("{SCENARIO_HEADER}\n{body}")
    }

    pub fn interframe_us(&self) -> u64 {
        if self.frame_rate == 30 {
            crate::scheduler::INTERFRAME_30FPS_US
        } else {
            crate::scheduler::INTERFRAME_60FPS_US
        }
    }

    pub fn link(&self, id: &str) -> Option<&LinkState> {
        self.links.iter().find(|l| l.id == id).map(|l| &l.state)
    }

    pub fn cell(&self, id: &str) -> Option<&CellSpec> {
        self.cells.iter().find(|c| c.id == id)
    }

    pub fn server_exists(&self, id: &str, tier: Tier) -> bool {
        match tier {
            Tier::Edge => self.cells.iter().flat_map(|c| &c.servers).any(|s| s.id == id),
            Tier::Cloud => self.cloud.iter().any(|s| s.id == id),
        }
    }

    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut errs = Vec::new();
        let mut e = |path: String, message: &str| errs.push(FieldError { path, message: message.to_string() });

        if self.duration_us == 0 {
            e("duration_us".into(), "must be positive");
        }
        if self.frame_rate != 30 && self.frame_rate != 60 {
            e("frame_rate".into(), "must be 30 or 60");
        }
        if self.sensor_period_us == 0 {
            e("sensor_period_us".into(), "must be positive");
        }
        if !(self.view.h_fov_deg > 0.0 && self.view.h_fov_deg < 180.0 && self.view.v_fov_deg > 0.0 && self.view.v_fov_deg < 180.0) {
            e("view".into(), "field of view angles must be in (0, 180)");
        }
        if !(self.view.near_m > 0.0 && self.view.far_m > self.view.near_m) {
            e("view".into(), "need 0 < near_m < far_m");
        }
        if !self.display.budget().is_valid() {
            e("display".into(), "need max_items >= 1 and 0 < max_solid_angle <= 1");
        }
        if !self.zones.is_valid() {
            e("zones".into(), "thresholds must be positive and strictly increasing");
        }
        let en = &self.energy;
        if [en.compute_per_activation_mj, en.message_mj, en.radio_per_byte_mj, en.local_task_mj].iter().any(|v| !(*v >= 0.0))
            || !(en.battery_capacity_mj > 0.0)
        {
            e("energy".into(), "charges must be >= 0 and battery capacity > 0");
        }
        if !(self.device.cpu_factor > 0.0) || !(0.0..=1.0).contains(&self.device.battery_frac) {
            e("device".into(), "cpu_factor must be > 0 and battery_frac in [0, 1]");
        }

        for (i, l) in self.links.iter().enumerate() {
            if !l.state.is_valid() {
                e(format!("links[{i}]"), "need bandwidth_bps > 0 and loss_p in [0, 1)");
            }
        }
        let link_ok = |id: &str| self.links.iter().any(|l| l.id == id);
        if !link_ok(&self.network.link) {
            e("network.link".into(), &format!("unknown link `{}`", self.network.link));
        }
        if self.network.fec_k == 0 {
            e("network.fec_k".into(), "must be >= 1");
        }
        if self.network.quality_ladder.windows(2).any(|w| w[0] > w[1]) {
            e("network.quality_ladder".into(), "must be sorted ascending");
        }
        if !self.network.initial_cell.is_empty() && self.cell(&self.network.initial_cell).is_none() {
            e("network.initial_cell".into(), &format!("unknown cell `{}`", self.network.initial_cell));
        }
        let mut server_ids = BTreeSet::new();
        for (i, c) in self.cells.iter().enumerate() {
            if let Some(l) = &c.link {
                if !link_ok(l) {
                    e(format!("cells[{i}].link"), &format!("unknown link `{l}`"));
                }
            }
            for (j, s) in c.servers.iter().enumerate() {
                if !server_ids.insert(s.id.clone()) {
                    e(format!("cells[{i}].servers[{j}].id"), "duplicate server id");
                }
                if !(s.cpu_factor > 0.0) || !(0.0..=1.0).contains(&s.load) {
                    e(format!("cells[{i}].servers[{j}]"), "cpu_factor must be > 0 and load in [0, 1]");
                }
            }
        }
        for (i, s) in self.cloud.iter().enumerate() {
            if !server_ids.insert(s.id.clone()) {
                e(format!("cloud[{i}].id"), "duplicate server id");
            }
            if !(s.cpu_factor > 0.0) || !(0.0..=1.0).contains(&s.load) {
                e(format!("cloud[{i}]"), "cpu_factor must be > 0 and load in [0, 1]");
            }
        }

        let mut element_ids = BTreeSet::new();
        let mut anchors = BTreeSet::new();
        for (i, w) in self.world.iter().enumerate() {
            if !element_ids.insert(w.id) {
                e(format!("world[{i}].id"), "duplicate element id");
            }
            if w.kind == ElementKind::Anchor {
                anchors.insert(w.id);
            }
            if w.sensitivity == Sensitivity::Bystander {
                e(format!("world[{i}].sensitivity"), "seed elements cannot be bystander-tagged");
            }
            if let Err(err) = w.element(0).validate(0) {
                e(format!("world[{i}]"), &err.to_string());
            }
        }

        let mut app_ids = BTreeSet::new();
        for (i, a) in self.apps.iter().enumerate() {
            if !app_ids.insert(a.id) {
                e(format!("apps[{i}].id"), "duplicate app id");
            }
            if a.demand_us == 0 {
                e(format!("apps[{i}].demand_us"), "must be positive");
            }
            if !a.lease.aabb().is_valid() {
                e(format!("apps[{i}].lease"), "invalid box");
            }
            if let Some(pin) = &a.pin {
                match parse_pin(pin) {
                    None => e(format!("apps[{i}].pin"), &format!("cannot parse pin `{pin}`")),
                    Some(Placement::Edge(s)) if !self.server_exists(&s, Tier::Edge) => {
                        e(format!("apps[{i}].pin"), &format!("unknown edge server `{s}`"))
                    }
                    Some(Placement::Cloud(s)) if !self.server_exists(&s, Tier::Cloud) => {
                        e(format!("apps[{i}].pin"), &format!("unknown cloud server `{s}`"))
                    }
                    _ => {}
                }
            }
            for (j, p) in a.placements.iter().enumerate() {
                if !anchors.contains(&p.anchor) && self.world_store.is_none() {
                    e(format!("apps[{i}].placements[{j}].anchor"), &format!("no anchor with id {}", p.anchor));
                }
                if !p.bounds.aabb().is_valid() {
                    e(format!("apps[{i}].placements[{j}].bounds"), "invalid box");
                }
                if !(0.0..=1.0).contains(&p.relevance) {
                    e(format!("apps[{i}].placements[{j}].relevance"), "must be in [0, 1]");
                }
            }
        }

        fn sorted<T>(items: &[T], t: impl Fn(&T) -> Time) -> bool {
            items.windows(2).all(|w| t(&w[0]) <= t(&w[1]))
        }
        if !sorted(&self.motion, |m| m.t_us) {
            e("motion".into(), "trace timestamps must be sorted");
        }
        if !sorted(&self.switches, |s| s.t_us) {
            e("switches".into(), "timestamps must be sorted");
        }
        if !sorted(&self.handovers, |h| h.t_us) {
            e("handovers".into(), "timestamps must be sorted");
        }
        if !sorted(&self.contexts, |c| c.t_us) {
            e("contexts".into(), "timestamps must be sorted");
        }
        if !sorted(&self.bystanders, |b| b.t_us) {
            e("bystanders".into(), "timestamps must be sorted");
        }
        if !sorted(&self.inputs, |x| x.t_us) {
            e("inputs".into(), "timestamps must be sorted");
        }
        for (i, s) in self.switches.iter().enumerate() {
            if !app_ids.contains(&s.from) {
                e(format!("switches[{i}].from"), &format!("unknown app {}", s.from));
            }
            if !app_ids.contains(&s.to) {
                e(format!("switches[{i}].to"), &format!("unknown app {}", s.to));
            }
            if s.from == s.to {
                e(format!("switches[{i}]"), "from and to must differ");
            }
        }
        for (i, h) in self.handovers.iter().enumerate() {
            if self.cell(&h.cell).is_none() {
                e(format!("handovers[{i}].cell"), &format!("unknown cell `{}`", h.cell));
            }
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if !app_ids.contains(&t.app) {
                e(format!("tasks[{i}].app"), &format!("unknown app {}", t.app));
            }
            if t.exec_us_local == 0 {
                e(format!("tasks[{i}].exec_us_local"), "must be positive");
            }
            if t.count > 1 && t.period_us == 0 {
                e(format!("tasks[{i}].period_us"), "must be positive for repeated tasks");
            }
            if let Some(target) = t.recognition_target {
                if !element_ids.contains(&target) {
                    e(format!("tasks[{i}].recognition_target"), &format!("no element with id {target}"));
                }
            }
        }
        for (i, b) in self.bystanders.iter().enumerate() {
            if !b.region.aabb().is_valid() {
                e(format!("bystanders[{i}].region"), "invalid box");
            }
        }
        for (i, x) in self.inputs.iter().enumerate() {
            if Vec3::from(x.direction).norm() == 0.0 {
                e(format!("inputs[{i}].direction"), "must be non-zero");
            }
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if !element_ids.contains(&c.element) && self.world_store.is_none() {
                e(format!("candidates[{i}].element"), &format!("no element with id {}", c.element));
            }
            if !c.roles.input && !c.roles.output {
                e(format!("candidates[{i}]"), "needs at least one role");
            }
        }
        if let Some(s) = &self.sync {
            if s.period_us == 0 {
                e("sync.period_us".into(), "must be positive");
            }
            for (i, p) in s.peers.iter().enumerate() {
                for (j, el) in p.elements.iter().enumerate() {
                    if el.sensitivity == Sensitivity::Bystander {
                        e(format!("sync.peers[{i}].elements[{j}].sensitivity"), "peer elements cannot be bystander-tagged");
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}
