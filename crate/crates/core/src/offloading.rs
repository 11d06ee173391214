//! Profiler-driven offloading decisions and the edge enabler client.
//!
//! The cost model is additive completion time:
//!
//! ```text
//! local  = exec / device_cpu
//! remote = payload/bandwidth + latency + exec / (server_cpu * (1 - load)) + result/bandwidth + latency
//! ```
//!
//! where `latency` includes the server's extra backbone latency (zero for
//! edge servers). Cloud servers are edge servers with more latency and
//! unbounded memory.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AppId, TaskId};
use crate::sim::Time;

pub const LOW_BATTERY_FRACTION: f64 = 0.2;
pub const LOW_BATTERY_REMOTE_BIAS: f64 = 0.8;
pub const DEFAULT_MIGRATION_US: u64 = 50_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OffloadError {
    #[error("unknown server `{0}`")]
    UnknownServer(String),
    #[error("edge session is {0:?}; operation not allowed")]
    InvalidState(EdgeState),
    #[error("new cell `{0}` is the current cell")]
    SameCell(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetworkType {
    #[serde(rename = "3G")]
    G3,
    #[serde(rename = "LTE")]
    Lte,
    #[serde(rename = "WiFi")]
    WiFi,
    #[serde(rename = "5G")]
    G5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: NetworkType,
    pub bandwidth_bps: u64,
    pub latency_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub cpu_factor: f64,
    pub battery_frac: f64,
    pub storage_free_bytes: u64,
    pub mem_free_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserPrefs {
    pub confidential_tasks_local_only: bool,
    pub data_share_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub exec_us_local: u64,
    pub payload_bytes: u64,
    pub result_bytes: u64,
    pub deadline_us: u64,
    pub confidential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Tier {
    #[default]
    Edge,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub id: String,
    #[serde(default)]
    pub tier: Tier,
    pub cpu_factor: f64,
    #[serde(default)]
    pub load: f64,
    /// `None` means unbounded.
    #[serde(default)]
    pub mem_free_bytes: Option<u64>,
    #[serde(default)]
    pub extra_latency_us: u64,
}

impl ServerSpec {
    pub fn speed(&self) -> f64 {
        self.cpu_factor * (1.0 - self.load)
    }
}

/// The five parameter categories the decision is made from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub network: NetworkSpec,
    pub device: DeviceSpec,
    pub user: UserPrefs,
    pub task: TaskSpec,
    pub servers: Vec<ServerSpec>,
}

impl Profile {
    pub fn server(&self, id: &str) -> Option<&ServerSpec> {
        self.servers.iter().find(|s| s.id == id)
    }

    pub fn is_valid(&self) -> bool {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        self.device.cpu_factor > 0.0
            && frac(self.device.battery_frac)
            && self.task.exec_us_local > 0
            && self.network.bandwidth_bps > 0
            && self.servers.iter().all(|s| s.cpu_factor > 0.0 && frac(s.load))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Placement {
    Local,
    Edge(String),
    Cloud(String),
}

impl Placement {
    pub fn server_id(&self) -> Option<&str> {
        match self {
            Placement::Local => None,
            Placement::Edge(s) | Placement::Cloud(s) => Some(s),
        }
    }

    pub fn is_remote(&self) -> bool {
        !matches!(self, Placement::Local)
    }

    pub fn for_server(s: &ServerSpec) -> Placement {
        match s.tier {
            Tier::Edge => Placement::Edge(s.id.clone()),
            Tier::Cloud => Placement::Cloud(s.id.clone()),
        }
    }

    /// Tie-break order: Local first, then by server id.
    fn tie_key(&self) -> (u8, &str) {
        match self {
            Placement::Local => (0, ""),
            Placement::Edge(s) | Placement::Cloud(s) => (1, s.as_str()),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::Local => write!(f, "local"),
            Placement::Edge(s) => write!(f, "edge:{s}"),
            Placement::Cloud(s) => write!(f, "cloud:{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Infeasible {
    ConfidentialLocalOnly,
    ServerMemory,
    ServerSaturated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostEstimate {
    Time(u64),
    Infeasible(Infeasible),
}

impl CostEstimate {
    pub fn time(self) -> Option<u64> {
        match self {
            CostEstimate::Time(t) => Some(t),
            CostEstimate::Infeasible(_) => None,
        }
    }
}

fn ser_us(bytes: u64, bps: u64) -> f64 {
    bytes as f64 * 8.0 * 1e6 / bps as f64
}

pub fn estimate_cost(profile: &Profile, placement: &Placement) -> Result<CostEstimate, OffloadError> {
    let task = &profile.task;
    let Some(sid) = placement.server_id() else {
        let t = task.exec_us_local as f64 / profile.device.cpu_factor;
        return Ok(CostEstimate::Time(t.ceil() as u64));
    };
    let server = profile.server(sid).ok_or_else(|| OffloadError::UnknownServer(sid.to_string()))?;
    if task.confidential && profile.user.confidential_tasks_local_only {
        return Ok(CostEstimate::Infeasible(Infeasible::ConfidentialLocalOnly));
    }
    if server.mem_free_bytes.is_some_and(|m| task.payload_bytes > m) {
        return Ok(CostEstimate::Infeasible(Infeasible::ServerMemory));
    }
    let speed = server.speed();
    if speed <= 0.0 {
        return Ok(CostEstimate::Infeasible(Infeasible::ServerSaturated));
    }
    let latency = (profile.network.latency_us + server.extra_latency_us) as f64;
    let bw = profile.network.bandwidth_bps;
    let t = ser_us(task.payload_bytes, bw) + latency + task.exec_us_local as f64 / speed + ser_us(task.result_bytes, bw) + latency;
    Ok(CostEstimate::Time(t.ceil() as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub placement: Placement,
    pub estimate: CostEstimate,
    /// Cost used for comparison (battery bias applied to remote placements).
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub placement: Placement,
    pub table: Vec<CostRow>,
    pub pinned: bool,
}

impl Decision {
    /// `placement=cost` pairs joined by `;` for the audit log.
    pub fn table_string(&self) -> String {
        self.table
            .iter()
            .map(|r| match r.estimate {
                CostEstimate::Time(t) => format!("{}={t}", r.placement),
                CostEstimate::Infeasible(why) => format!("{}=infeasible({why:?})", r.placement),
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

fn cost_table(profile: &Profile, available: &[&str]) -> Vec<CostRow> {
    let bias = if profile.device.battery_frac < LOW_BATTERY_FRACTION { LOW_BATTERY_REMOTE_BIAS } else { 1.0 };
    let mut placements = vec![Placement::Local];
    let mut remotes: Vec<&ServerSpec> = profile.servers.iter().filter(|s| available.contains(&s.id.as_str())).collect();
    remotes.sort_by(|a, b| a.id.cmp(&b.id));
    placements.extend(remotes.into_iter().map(Placement::for_server));
    placements
        .into_iter()
        .map(|p| {
            let estimate = estimate_cost(profile, &p).expect("servers drawn from the profile");
            let factor = if p.is_remote() { bias } else { 1.0 };
            let score = estimate.time().map(|t| t as f64 * factor);
            CostRow { placement: p, estimate, score }
        })
        .collect()
}

fn better(a: &CostRow, b: &CostRow) -> bool {
    match (a.score, b.score) {
        (Some(x), Some(y)) => match x.total_cmp(&y) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.placement.tie_key() < b.placement.tie_key(),
        },
        (Some(_), None) => true,
        _ => false,
    }
}

/// Argmin of the (battery-biased) cost over Local and the available servers.
pub fn decide(profile: &Profile, available: &[&str]) -> Decision {
    let table = cost_table(profile, available);
    let mut best = &table[0];
    for row in &table[1..] {
        if better(row, best) {
            best = row;
        }
    }
    Decision { placement: best.placement.clone(), table: table.clone(), pinned: false }
}

/// Like [`decide`], but a feasible, available pin is taken as is.
pub fn decide_pinned(profile: &Profile, available: &[&str], pin: Option<&Placement>) -> Decision {
    let mut d = decide(profile, available);
    if let Some(pin) = pin {
        if let Some(row) = d.table.iter().find(|r| &r.placement == pin) {
            if row.score.is_some() {
                d.placement = pin.clone();
                d.pinned = true;
            }
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeState {
    Undiscovered,
    Discovered,
    Attached,
    Migrating,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSession {
    pub state: EdgeState,
    pub server: Option<String>,
    pub user_cell: Option<String>,
    pub candidates: Vec<String>,
    /// States visited by the last transition, for tracing.
    pub path: Vec<EdgeState>,
}

impl Default for EdgeSession {
    fn default() -> Self {
        EdgeSession { state: EdgeState::Undiscovered, server: None, user_cell: None, candidates: vec![], path: vec![] }
    }
}

impl EdgeSession {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_consistent(&self) -> bool {
        match self.state {
            EdgeState::Attached => self.server.is_some(),
            EdgeState::Undiscovered => self.server.is_none(),
            _ => true,
        }
    }

    /// Caches the edge servers of `cell`.
    pub fn discover(&self, cell: &str, cell_servers: &[ServerSpec]) -> Result<EdgeSession, OffloadError> {
        if self.state != EdgeState::Undiscovered {
            return Err(OffloadError::InvalidState(self.state));
        }
        let mut candidates: Vec<String> = cell_servers.iter().map(|s| s.id.clone()).collect();
        candidates.sort();
        Ok(EdgeSession {
            state: EdgeState::Discovered,
            server: None,
            user_cell: Some(cell.to_string()),
            candidates,
            path: vec![EdgeState::Discovered],
        })
    }

    /// Refreshes the candidate cache after moving while not attached.
    pub fn rediscover(&self, cell: &str, cell_servers: &[ServerSpec]) -> Result<EdgeSession, OffloadError> {
        if matches!(self.state, EdgeState::Attached | EdgeState::Migrating) {
            return Err(OffloadError::InvalidState(self.state));
        }
        EdgeSession::new().discover(cell, cell_servers)
    }

    /// Attaches to `server` after a decision selected it.
    pub fn attach(&mut self, server: &str) -> Result<(), OffloadError> {
        match self.state {
            EdgeState::Discovered | EdgeState::Attached if self.candidates.iter().any(|c| c == server) => {
                self.state = EdgeState::Attached;
                self.server = Some(server.to_string());
                Ok(())
            }
            EdgeState::Discovered | EdgeState::Attached => Err(OffloadError::UnknownServer(server.to_string())),
            s => Err(OffloadError::InvalidState(s)),
        }
    }
}

/// Where an in-flight task currently is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskPhase {
    Local { ends_at: Time },
    Uplink { arrives_at: Time },
    /// `work_done_us` is measured in local-execution microseconds; `rate` is the
    /// server speed (local-µs of work per µs).
    Exec { started: Time, work_done_us: f64, rate: f64 },
    Downlink { arrives_at: Time },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InFlightTask {
    pub id: TaskId,
    pub app: AppId,
    pub spec: TaskSpec,
    pub placement: Placement,
    pub submitted_at: Time,
    pub phase: TaskPhase,
    /// Bumped whenever the task's schedule changes; stale events are ignored.
    pub generation: u32,
}

impl InFlightTask {
    pub fn exec_end(&self) -> Option<Time> {
        match self.phase {
            TaskPhase::Exec { started, work_done_us, rate } => {
                let left = (self.spec.exec_us_local as f64 - work_done_us).max(0.0);
                Some(started + (left / rate).ceil() as u64)
            }
            _ => None,
        }
    }

    /// Work completed by time `t` (local-µs), for progress accounting.
    pub fn progress_at(&self, t: Time) -> f64 {
        match self.phase {
            TaskPhase::Exec { started, work_done_us, rate } => {
                (work_done_us + t.saturating_sub(started) as f64 * rate).min(self.spec.exec_us_local as f64)
            }
            TaskPhase::Downlink { .. } => self.spec.exec_us_local as f64,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandoverResult {
    pub session: EdgeSession,
    pub tasks: Vec<InFlightTask>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HandoverError {
    InvalidState(EdgeState),
    SameCell(String),
    /// The session fell back to Discovered and remote tasks re-run locally.
    NoServerInCell(HandoverResult),
}

fn pick_target(cell_servers: &[ServerSpec]) -> Option<&ServerSpec> {
    cell_servers
        .iter()
        .filter(|s| s.speed() > 0.0)
        .min_by(|a, b| b.speed().total_cmp(&a.speed()).then(a.id.cmp(&b.id)))
}

/// Moves an attached session to `new_cell`, re-binding edge tasks to the new
/// cell's fastest server with their progress preserved. The migration latency
/// is charged once to every task that still needed the server.
pub fn handover(
    session: &EdgeSession,
    new_cell: &str,
    cell_servers: &[ServerSpec],
    in_flight: &[InFlightTask],
    now: Time,
    migration_us: u64,
    device_cpu: f64,
) -> Result<HandoverResult, HandoverError> {
    if session.state != EdgeState::Attached {
        return Err(HandoverError::InvalidState(session.state));
    }
    if session.user_cell.as_deref() == Some(new_cell) {
        return Err(HandoverError::SameCell(new_cell.to_string()));
    }
    let old_server = session.server.clone();
    let bound_here = |t: &InFlightTask| matches!(&t.placement, Placement::Edge(s) if Some(s) == old_server.as_ref());
    let mut candidates: Vec<String> = cell_servers.iter().map(|s| s.id.clone()).collect();
    candidates.sort();

    let Some(target) = pick_target(cell_servers) else {
        let tasks = in_flight
            .iter()
            .map(|t| {
                if !bound_here(t) {
                    return t.clone();
                }
                let exec = (t.spec.exec_us_local as f64 / device_cpu).ceil() as u64;
                InFlightTask {
                    placement: Placement::Local,
                    phase: TaskPhase::Local { ends_at: now + exec },
                    generation: t.generation + 1,
                    ..t.clone()
                }
            })
            .collect();
        let session = EdgeSession {
            state: EdgeState::Discovered,
            server: None,
            user_cell: Some(new_cell.to_string()),
            candidates,
            path: vec![EdgeState::Migrating, EdgeState::Discovered],
        };
        return Err(HandoverError::NoServerInCell(HandoverResult { session, tasks }));
    };

    let resume = now + migration_us;
    let tasks = in_flight
        .iter()
        .map(|t| {
            if !bound_here(t) {
                return t.clone();
            }
            let phase = match t.phase {
                TaskPhase::Uplink { arrives_at } => TaskPhase::Uplink { arrives_at: resume + arrives_at.saturating_sub(now) },
                TaskPhase::Exec { .. } => TaskPhase::Exec { started: resume, work_done_us: t.progress_at(now), rate: target.speed() },
                other => return InFlightTask { placement: Placement::Edge(target.id.clone()), ..t.clone() }.with_phase(other),
            };
            InFlightTask { placement: Placement::Edge(target.id.clone()), phase, generation: t.generation + 1, ..t.clone() }
        })
        .collect();
    let session = EdgeSession {
        state: EdgeState::Attached,
        server: Some(target.id.clone()),
        user_cell: Some(new_cell.to_string()),
        candidates,
        path: vec![EdgeState::Migrating, EdgeState::Attached],
    };
    Ok(HandoverResult { session, tasks })
}

impl InFlightTask {
    fn with_phase(mut self, phase: TaskPhase) -> Self {
        self.phase = phase;
        self
    }
}
