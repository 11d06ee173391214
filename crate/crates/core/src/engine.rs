//! Wires the modules into the event loop and runs a scenario to completion.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::display::{coverage, select_visible, RenderItem};
use crate::geometry::{Aabb, Frustum, Pose, Ray, Vec3};
use crate::ids::{AppId, ElementId, PlacementId, TaskId};
use crate::interaction::{classify_zone, enlarge_target, route_input, IoCandidate, PendingRecognition, RecognitionTracker};
use crate::network::{adapt_rate, plan_recovery, transmit_block, BlockOutcome, BlockReport, LinkState, RecoveryPlan};
use crate::offloading::{
    decide_pinned, handover, EdgeSession, EdgeState, HandoverError, InFlightTask, NetworkSpec, Placement, Profile, ServerSpec,
    TaskPhase, TaskSpec,
};
use crate::privacy::{
    filter_input, filter_output, gate_network_share, AuditRecord, Clearance, PrivacyError, SensorFrame,
    UserContext,
};
use crate::scenario::{parse_pin, Scenario};
use crate::scheduler::{classify_fov, AppProcess, FovRelation, FrameSchedule, ModelMode, ProcState, Scheduler, SwitchRequest};
use crate::sim::{EnergyKind, MetricsLedger, FRAMES_RENDERED, MOTION_TO_PHOTON_TOTAL};
use crate::sim::{EventHandler, Payload, PolicyChange, SimError, SimEvent, Simulator, Time, TraceEntry};
use crate::world_model::{
    ContentPlacement, ElementKind, LeaseMode, PlacementOutcome, Sensitivity, WorldElement, WorldError, WorldModel,
    DEFAULT_CELL_SIZE,
};

/// Ids at and above this value are reserved for synthetic bystander observations.
pub const BYSTANDER_ID_BASE: u64 = 1 << 48;
const INJECTED_TAINT_ID: u64 = BYSTANDER_ID_BASE - 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("taint: {0}")]
    Taint(String),
    #[error("invariant {name} broken at {at} us: {detail}")]
    Invariant { name: &'static str, at: Time, detail: String },
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
}

impl Violation {
    pub fn name(&self) -> &'static str {
        match self {
            Violation::Taint(_) => "taint",
            Violation::Invariant { name, .. } => name,
            Violation::Sim(_) => "simulation",
        }
    }
}

impl From<WorldError> for Violation {
    fn from(e: WorldError) -> Self {
        Violation::Taint(e.to_string())
    }
}

impl From<PrivacyError> for Violation {
    fn from(e: PrivacyError) -> Self {
        Violation::Taint(e.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub record_render: bool,
    pub keep_trace: bool,
    /// Log every element that reaches a sink, see [`Exposure`].
    pub record_exposure: bool,
}

/// Places an element can end up once it has passed the input filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sink {
    Store,
    Query,
    Transmit,
    /// Anchor of a rendered placement.
    Render,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exposure {
    pub time: Time,
    pub sink: Sink,
    pub element: ElementId,
    pub sensitivity: Sensitivity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLog {
    pub time: Time,
    pub task: TaskId,
    pub app: AppId,
    pub placement: Placement,
    pub pinned: bool,
    pub costs: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockLog {
    pub time: Time,
    pub flow: String,
    pub plan: RecoveryPlan,
    pub report: BlockReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditLog {
    pub time: Time,
    pub stage: &'static str,
    pub record: AuditRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderLog {
    pub frame: u64,
    pub time: Time,
    pub item: RenderItem,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ledger: MetricsLedger,
    pub decisions: Vec<DecisionLog>,
    pub blocks: Vec<BlockLog>,
    pub audit: Vec<AuditLog>,
    pub render: Vec<RenderLog>,
    pub world: Vec<WorldElement>,
    pub exposures: Vec<Exposure>,
    /// Processed events, when [`RunOptions::keep_trace`] is set.
    pub trace: Vec<TraceEntry>,
    pub violation: Option<Violation>,
    pub events_processed: u64,
    pub events_enqueued: u64,
    /// Events still queued when the run stopped.
    pub events_pending: usize,
}

impl RunOutput {
    pub fn ok(&self) -> bool {
        self.violation.is_none()
    }
}

struct Engine<'a> {
    sc: &'a Scenario,
    opts: RunOptions,
    world: WorldModel,
    sched: Scheduler,
    scene: Vec<WorldElement>,
    servers: Vec<ServerSpec>,
    session: EdgeSession,
    current_cell: Option<String>,
    user_pose: Pose,
    last_motion: (Time, Pose),
    angular_speed: f64,
    context: UserContext,
    bystanders: BTreeMap<u32, Aabb>,
    relevance: BTreeMap<PlacementId, f64>,
    pins: BTreeMap<AppId, Placement>,
    clearance: BTreeMap<AppId, Clearance>,
    leases: BTreeMap<AppId, Aabb>,
    render_cache: Option<Vec<RenderItem>>,
    last_mtp: u64,
    in_flight: BTreeMap<u64, InFlightTask>,
    recognitions: BTreeMap<u64, PendingRecognition>,
    tracker: RecognitionTracker,
    completed: BTreeSet<u64>,
    next_task: u64,
    merged_peers: BTreeSet<usize>,
    net_rng: ChaCha8Rng,
    decisions: Vec<DecisionLog>,
    blocks: Vec<BlockLog>,
    audit: Vec<AuditLog>,
    render: Vec<RenderLog>,
    exposures: Vec<Exposure>,
}

fn kind_label(p: &Placement) -> &'static str {
    match p {
        Placement::Local => "local",
        Placement::Edge(_) => "edge",
        Placement::Cloud(_) => "cloud",
    }
}

/// Angle between where an overlay is drawn and where its anchor is, as seen
/// from the device origin.
pub fn sight_error_deg(drawn: &Pose, truth: &Pose) -> f64 {
    let (a, b) = (drawn.position, truth.position);
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return 0.0;
    }
    (a.dot(&b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos().to_degrees()
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, initial_world: &[WorldElement], sim: &Simulator, opts: RunOptions) -> Self {
        let mut sched = Scheduler::new(sc.mode, sc.interframe_us(), sim.rng.stream("scheduler"));
        sched.recovery = sc.scheduler.recovery;
        sched.rebind = sc.scheduler.rebind;
        let mut scene: Vec<WorldElement> = initial_world.to_vec();
        scene.extend(sc.world.iter().map(|w| w.element(0)));
        scene.sort_by_key(|e| e.id);
        scene.dedup_by_key(|e| e.id);
        let mut servers: Vec<ServerSpec> = sc.cells.iter().flat_map(|c| c.servers.iter().cloned()).collect();
        servers.extend(sc.cloud.iter().cloned());
        let start = sc.view.start.pose();
        Engine {
            sc,
            opts,
            world: WorldModel::new(DEFAULT_CELL_SIZE),
            sched,
            scene,
            servers,
            session: EdgeSession::new(),
            current_cell: None,
            user_pose: start,
            last_motion: (0, start),
            angular_speed: 0.0,
            context: UserContext::Stationary,
            bystanders: BTreeMap::new(),
            relevance: BTreeMap::new(),
            pins: BTreeMap::new(),
            clearance: BTreeMap::new(),
            leases: BTreeMap::new(),
            render_cache: None,
            last_mtp: 0,
            in_flight: BTreeMap::new(),
            recognitions: BTreeMap::new(),
            tracker: RecognitionTracker::new(),
            completed: BTreeSet::new(),
            next_task: 0,
            merged_peers: BTreeSet::new(),
            net_rng: sim.rng.stream("network"),
            decisions: Vec::new(),
            blocks: Vec::new(),
            audit: Vec::new(),
            render: Vec::new(),
            exposures: Vec::new(),
        }
    }

    fn expose<'e>(&mut self, time: Time, sink: Sink, elements: impl IntoIterator<Item = &'e WorldElement>) {
        if self.opts.record_exposure {
            self.exposures.extend(
                elements.into_iter().map(|e| Exposure { time, sink, element: e.id, sensitivity: e.sensitivity }),
            );
        }
    }

    fn compute(ledger: &mut MetricsLedger, sc: &Scenario, module: &str) -> Result<(), Violation> {
        ledger.charge_energy(module, EnergyKind::Compute, sc.energy.compute_per_activation_mj)?;
        Ok(())
    }

    fn message(ledger: &mut MetricsLedger, sc: &Scenario, from: &str) -> Result<(), Violation> {
        ledger.charge_energy(from, EnergyKind::Message, sc.energy.message_mj)?;
        Ok(())
    }

    fn radio(ledger: &mut MetricsLedger, sc: &Scenario, bytes: u64) -> Result<(), Violation> {
        ledger.charge_energy("network", EnergyKind::Radio, bytes as f64 * sc.energy.radio_per_byte_mj)?;
        Ok(())
    }

    fn battery_frac(&self, ledger: &MetricsLedger) -> f64 {
        (self.sc.device.battery_frac - ledger.total_energy_mj() / self.sc.energy.battery_capacity_mj).clamp(0.0, 1.0)
    }

    fn frustum(&self) -> Frustum {
        let v = &self.sc.view;
        Frustum::new(self.user_pose, v.h_fov_deg, v.v_fov_deg, v.near_m, v.far_m)
    }

    /// World-to-device transform.
    fn view(&self) -> Pose {
        self.user_pose.inverse()
    }

    fn link(&self) -> LinkState {
        let id = self
            .current_cell
            .as_deref()
            .and_then(|c| self.sc.cell(c))
            .and_then(|c| c.link.as_deref())
            .unwrap_or(&self.sc.network.link);
        *self.sc.link(id).expect("links validated")
    }

    fn link_to(&self, placement: &Placement) -> LinkState {
        let mut l = self.link();
        if let Some(s) = placement.server_id().and_then(|id| self.servers.iter().find(|s| s.id == id)) {
            l.latency_us += s.extra_latency_us;
        }
        l
    }

    fn invariant(&self, name: &'static str, at: Time, ok: bool, detail: impl FnOnce() -> String) -> Result<(), Violation> {
        if ok {
            Ok(())
        } else {
            Err(Violation::Invariant { name, at, detail: detail() })
        }
    }

    fn log_audit(&mut self, now: Time, stage: &'static str, records: Vec<AuditRecord>, ledger: &mut MetricsLedger) {
        for r in records {
            ledger.incr(&format!("privacy_{}", r.action.as_str()), 1);
            self.audit.push(AuditLog { time: now, stage, record: r });
        }
    }

    fn setup(&mut self, sim: &mut Simulator) -> Result<(), Violation> {
        let sc = self.sc;
        let ledger = &mut sim.ledger;

        let frame = SensorFrame { elements: self.scene.clone(), bystanders: vec![], context: self.context.clone() };
        let (clean, audit) = filter_input(&frame, &sc.policy);
        self.log_audit(0, "input", audit, ledger);
        self.world.ingest_sensor_frame(&clean.elements, 0)?;

        for app in &sc.apps {
            let id = AppId(app.id);
            self.world.register_app(id);
            self.sched.register(AppProcess::new(id, app.demand_us));
            self.clearance.insert(id, app.clearance);
            if let Some(pin) = app.pin.as_deref().and_then(parse_pin) {
                self.pins.insert(id, pin);
            }
            let region = app.lease.aabb();
            match self.world.acquire_lease(id, region, LeaseMode::Write, 0) {
                Ok(_) => {
                    self.leases.insert(id, region);
                    ledger.incr("leases_granted", 1);
                }
                Err(_) => {
                    ledger.incr("leases_denied", 1);
                    continue;
                }
            }
            for p in &app.placements {
                let req = ContentPlacement { app: id, anchor_id: ElementId(p.anchor), bounds: p.bounds.aabb(), priority: p.priority };
                match self.world.place_content(req) {
                    Ok(PlacementOutcome::Placed(pid)) => {
                        ledger.incr("placements_placed", 1);
                        self.relevance.insert(pid, p.relevance);
                    }
                    Ok(PlacementOutcome::Relocated(pid, _)) => {
                        ledger.incr("placements_relocated", 1);
                        self.relevance.insert(pid, p.relevance);
                    }
                    Ok(PlacementOutcome::Rejected) | Err(_) => ledger.incr("placements_rejected", 1),
                }
            }
        }
        self.invariant("lease_disjointness", 0, self.world.check_lease_disjointness(), || "overlapping write leases".into())?;
        self.invariant("placement_disjointness", 0, self.world.check_placement_disjointness(), || {
            "overlapping placements of different apps".into()
        })?;

        if !sc.network.initial_cell.is_empty() {
            self.enter_cell(&sc.network.initial_cell.clone(), 0, sim)?;
        }

        let end = sc.duration_us;
        sim.schedule(0, Payload::FrameTick { frame: 0 })?;
        sim.schedule(0, Payload::SensorFrame { frame: 0 })?;
        for (i, m) in sc.motion.iter().enumerate() {
            if m.t_us < end {
                sim.schedule(m.t_us, Payload::UserMoved { sample: i })?;
            }
        }
        for (i, s) in sc.switches.iter().enumerate() {
            if s.t_us < end {
                sim.schedule(s.t_us, Payload::AppSwitch { index: i })?;
            }
        }
        for (i, x) in sc.inputs.iter().enumerate() {
            if x.t_us < end {
                sim.schedule(x.t_us, Payload::UserInput { index: i })?;
            }
        }
        for c in &sc.contexts {
            if c.t_us < end {
                sim.schedule(c.t_us, Payload::PolicyChanged(PolicyChange::Context(c.context.clone())))?;
            }
        }
        for (i, b) in sc.bystanders.iter().enumerate() {
            if b.t_us < end {
                sim.schedule(b.t_us, Payload::PolicyChanged(PolicyChange::BystanderEnter(i as u32)))?;
                sim.schedule(b.t_us + b.duration_us, Payload::PolicyChanged(PolicyChange::BystanderLeave(i as u32)))?;
            }
        }
        for h in &sc.handovers {
            if h.t_us < end {
                sim.schedule(h.t_us, Payload::HandoverTriggered { cell: h.cell.clone() })?;
            }
        }
        for (i, t) in sc.tasks.iter().enumerate() {
            if t.count > 0 && t.start_us < end {
                sim.schedule(t.start_us, Payload::TaskSubmit { spec: i, instance: 0 })?;
            }
        }
        if let Some(s) = &sc.sync {
            if s.period_us < end {
                sim.schedule(s.period_us, Payload::SyncTick { round: 0 })?;
            }
        }
        if let Some(t) = sc.debug.inject_taint_us {
            if t < end {
                sim.schedule(t, Payload::PolicyChanged(PolicyChange::InjectTaint))?;
            }
        }
        Ok(())
    }

    fn enter_cell(&mut self, cell: &str, now: Time, sim: &mut Simulator) -> Result<(), Violation> {
        let servers = self.sc.cell(cell).map(|c| c.servers.clone()).unwrap_or_default();
        match self.session.state {
            EdgeState::Attached => {
                let tasks: Vec<InFlightTask> = self.in_flight.values().cloned().collect();
                let mig = self.sc.offloading.migration_us;
                let result = match handover(&self.session, cell, &servers, &tasks, now, mig, self.sc.device.cpu_factor) {
                    Ok(r) => {
                        sim.ledger.incr("handovers", 1);
                        sim.ledger.add_time("handover_migration", mig);
                        r
                    }
                    Err(HandoverError::NoServerInCell(r)) => {
                        sim.ledger.incr("handover_fallbacks", 1);
                        r
                    }
                    Err(HandoverError::SameCell(_)) => return Ok(()),
                    Err(HandoverError::InvalidState(s)) => {
                        return Err(Violation::Invariant { name: "edge_session", at: now, detail: format!("handover from {s:?}") })
                    }
                };
                self.session = result.session;
                for t in result.tasks {
                    let old_gen = self.in_flight.get(&t.id.0).map(|o| o.generation);
                    if old_gen != Some(t.generation) {
                        sim.ledger.incr("tasks_migrated", 1);
                        let ev = match t.phase {
                            TaskPhase::Local { ends_at } => (ends_at, Payload::TaskDone { task: t.id.0, generation: t.generation }),
                            TaskPhase::Uplink { arrives_at } => {
                                (arrives_at, Payload::PacketArrival { task: t.id.0, generation: t.generation })
                            }
                            TaskPhase::Exec { .. } => (
                                t.exec_end().expect("exec phase"),
                                Payload::ServerExecDone { task: t.id.0, generation: t.generation },
                            ),
                            TaskPhase::Downlink { arrives_at } => {
                                (arrives_at, Payload::TaskDone { task: t.id.0, generation: t.generation })
                            }
                        };
                        sim.schedule(ev.0, ev.1)?;
                    }
                    self.in_flight.insert(t.id.0, t);
                }
            }
            EdgeState::Migrating => {
                return Err(Violation::Invariant { name: "edge_session", at: now, detail: "session stuck migrating".into() })
            }
            _ => {
                if self.session.user_cell.as_deref() != Some(cell) {
                    self.session = self.session.rediscover(cell, &servers).expect("not attached");
                    sim.ledger.incr("edge_discoveries", 1);
                }
            }
        }
        self.current_cell = Some(cell.to_string());
        self.invariant("edge_session", now, self.session.is_consistent(), || format!("{:?}", self.session.state))
    }

    fn frame_tick(&mut self, frame: u64, now: Time, sim: &mut Simulator) -> Result<(), Violation> {
        let sc = self.sc;
        let frustum = self.frustum();
        let apps: Vec<AppId> = self.sched.apps().map(|a| a.id).collect();
        for id in &apps {
            let bounds: Vec<Aabb> = self.world.placements_of(*id).map(|(_, p)| p.bounds).collect();
            self.sched.set_fov(*id, classify_fov(&bounds, &frustum, sc.scheduler.near_distance_m));
        }
        let ledger = &mut sim.ledger;
        let sched = self.sched.run_frame(ledger);
        self.check_frame(&sched, now)?;
        ledger.incr(FRAMES_RENDERED, 1);
        if self.sched.mode() == ModelMode::IsolatedModel {
            let lost = self.sched.apps().any(|a| a.state == ProcState::Running && a.recovery_until.is_some_and(|t| t > now));
            if lost {
                ledger.incr("frames_tracking_lost", 1);
            }
        }
        ledger.sample("frame_spent_us", now, sched.budget.spent_us as f64)?;

        if self.render_cache.is_none() {
            let focused = self.sched.focused();
            let candidates: Vec<RenderItem> = self
                .world
                .placements()
                .filter(|(_, p)| {
                    sc.mode == ModelMode::SharedModel
                        || Some(p.app) == focused
                        || p.priority == crate::world_model::DisplayPriority::Safety
                })
                .map(|(id, p)| RenderItem::from_placement(id, p, self.relevance.get(&id).copied().unwrap_or(0.0)))
                .collect();
            let visible = select_visible(&candidates, &frustum, &sc.display.budget());
            let safety: Vec<Aabb> = sc.safety_objects.iter().map(|b| b.aabb()).collect();
            let (shown, audit) = filter_output(&visible, &self.context, &sc.policy, &safety);
            self.log_audit(now, "output", audit, ledger);
            ledger.sample("coverage_sr", now, coverage(&shown, &frustum))?;
            ledger.incr("render_recomputes", 1);
            Self::compute(ledger, sc, "display")?;
            Self::message(ledger, sc, "display")?;
            self.render_cache = Some(shown);
        }
        let shown = self.render_cache.clone().expect("filled above");
        let mut anchors = Vec::with_capacity(shown.len());
        for item in &shown {
            let anchor = self.world.placements().find(|(id, _)| *id == item.placement).map(|(_, p)| p.anchor_id);
            let el = anchor.and_then(|a| self.world.get(a));
            let tainted = el.is_some_and(|e| e.sensitivity == Sensitivity::Bystander);
            self.invariant("taint_render", now, !tainted, || format!("placement {} anchored on a bystander", item.placement))?;
            anchors.extend(el.cloned());
        }
        self.expose(now, Sink::Render, &anchors);
        ledger.incr("items_rendered", shown.len() as u64);
        if self.opts.record_render {
            for item in shown {
                self.render.push(RenderLog { frame, time: now, item });
            }
        }

        // pose is sampled at the tick; photons leave after the frame's compute and scanout
        let mtp = sched.budget.spent_us + sc.display.scanout_us;
        self.last_mtp = mtp;
        ledger.add_time(MOTION_TO_PHOTON_TOTAL, mtp);
        ledger.sample("motion_to_photon_us", now, mtp as f64)?;
        Self::compute(ledger, sc, "scheduler")?;
        Self::message(ledger, sc, "scheduler")?;

        let next = (frame + 1) * sc.interframe_us();
        if next < sc.duration_us {
            sim.schedule(next, Payload::FrameTick { frame: frame + 1 })?;
        }
        Ok(())
    }

    fn check_frame(&self, s: &FrameSchedule, now: Time) -> Result<(), Violation> {
        let total: u64 = s.grants.iter().map(|g| g.granted_us).sum();
        self.invariant("frame_budget", now, total <= self.sc.interframe_us(), || format!("{total} us granted"))?;
        let starved = s.grants.iter().any(|g| g.class == FovRelation::InView && g.granted_us < g.requested_us);
        let lower = s.grants.iter().any(|g| g.class != FovRelation::InView && g.granted_us > 0);
        self.invariant("in_view_priority", now, !(starved && lower), || "lower class served before in-view demand".into())?;
        self.invariant("focus", now, self.sched.check_focus_invariant(), || "focus state inconsistent".into())
    }

    fn sensor_frame(&mut self, frame: u64, now: Time, sim: &mut Simulator) -> Result<(), Violation> {
        let sc = self.sc;
        let pos = self.user_pose.position;
        let mut elements: Vec<WorldElement> = self
            .scene
            .iter()
            .filter(|e| e.extent.distance_to(&pos) <= sc.view.sensor_range_m)
            .map(|e| WorldElement { timestamp: now, ..e.clone() })
            .collect();
        for (i, region) in &self.bystanders {
            elements.push(
                WorldElement::new(BYSTANDER_ID_BASE + u64::from(*i), ElementKind::SemanticObject, *region, "camera", now)
                    .with_sensitivity(Sensitivity::Bystander)
                    .with_label("person"),
            );
        }
        let raw = SensorFrame { elements, bystanders: self.bystanders.values().copied().collect(), context: self.context.clone() };
        let (clean, audit) = filter_input(&raw, &sc.policy);
        let ledger = &mut sim.ledger;
        self.log_audit(now, "input", audit, ledger);
        self.expose(now, Sink::Store, &clean.elements);
        self.world.ingest_sensor_frame(&clean.elements, now)?;
        ledger.incr("sensor_frames", 1);
        Self::compute(ledger, sc, "privacy")?;
        Self::message(ledger, sc, "privacy")?;
        Self::compute(ledger, sc, "world_model")?;

        let next = (frame + 1) * sc.sensor_period_us;
        if next < sc.duration_us {
            sim.schedule(next, Payload::SensorFrame { frame: frame + 1 })?;
        }
        Ok(())
    }

    fn local_exec_us(&self, spec: &TaskSpec) -> u64 {
        (spec.exec_us_local as f64 / self.sc.device.cpu_factor).ceil() as u64
    }

    fn send(&mut self, now: Time, flow: String, bytes: u64, link: &LinkState, slack: u64, deadline: u64) -> BlockReport {
        let plan = plan_recovery(link, slack, self.sc.network.fec_k);
        let report = transmit_block(bytes, link, &plan, now, deadline, &mut self.net_rng);
        self.blocks.push(BlockLog { time: now, flow, plan, report });
        report
    }

    fn run_local(&mut self, mut task: InFlightTask, now: Time, sim: &mut Simulator) -> Result<(), Violation> {
        let ends_at = now + self.local_exec_us(&task.spec);
        task.placement = Placement::Local;
        task.phase = TaskPhase::Local { ends_at };
        task.generation += 1;
        sim.ledger.charge_energy("app_tasks", EnergyKind::Compute, self.sc.energy.local_task_mj)?;
        sim.schedule(ends_at, Payload::TaskDone { task: task.id.0, generation: task.generation })?;
        self.in_flight.insert(task.id.0, task);
        Ok(())
    }

    fn task_submit(&mut self, spec_idx: usize, instance: u64, now: Time, sim: &mut Simulator) -> Result<(), Violation> {
        let sc = self.sc;
        let ts = &sc.tasks[spec_idx];
        let app = AppId(ts.app);
        let id = self.next_task;
        self.next_task += 1;
        let spec = TaskSpec {
            exec_us_local: ts.exec_us_local,
            payload_bytes: ts.payload_bytes,
            result_bytes: ts.result_bytes,
            deadline_us: ts.deadline_us,
            confidential: ts.confidential,
        };
        let link = self.link();
        let profile = Profile {
            network: NetworkSpec { kind: sc.network.kind, bandwidth_bps: link.bandwidth_bps, latency_us: link.latency_us },
            device: crate::offloading::DeviceSpec { battery_frac: self.battery_frac(&sim.ledger), ..sc.device },
            user: sc.user_prefs,
            task: spec,
            servers: self.servers.clone(),
        };
        let mut available: Vec<&str> = Vec::new();
        if sc.offloading.enabled {
            if matches!(self.session.state, EdgeState::Discovered | EdgeState::Attached) {
                available.extend(self.session.candidates.iter().map(String::as_str));
            }
            available.extend(sc.cloud.iter().map(|s| s.id.as_str()));
        }
        let decision = decide_pinned(&profile, &available, self.pins.get(&app));
        let estimate = decision
            .table
            .iter()
            .find(|r| r.placement == decision.placement)
            .and_then(|r| r.estimate.time())
            .unwrap_or(0);
        self.decisions.push(DecisionLog {
            time: now,
            task: TaskId(id),
            app,
            placement: decision.placement.clone(),
            pinned: decision.pinned,
            costs: decision.table_string(),
        });
        let ledger = &mut sim.ledger;
        ledger.incr("tasks_submitted", 1);
        ledger.incr(&format!("tasks_placed_{}", kind_label(&decision.placement)), 1);
        Self::compute(ledger, sc, "offloading")?;

        if let Some(target) = ts.recognition_target {
            self.recognitions.insert(
                id,
                PendingRecognition { request: id, target: ElementId(target), submitted_at: now, pose_at_submit: self.view() },
            );
        }

        let task = InFlightTask {
            id: TaskId(id),
            app,
            spec,
            placement: decision.placement.clone(),
            submitted_at: now,
            phase: TaskPhase::Local { ends_at: now },
            generation: 0,
        };
        if decision.placement.is_remote() {
            if let Placement::Edge(s) = &decision.placement {
                if self.session.attach(s).is_err() {
                    return Err(Violation::Invariant { name: "edge_session", at: now, detail: format!("cannot attach to {s}") });
                }
            }
            let outbound = match self.leases.get(&app) {
                Some(region) => self
                    .world
                    .query_primitives(app, region, &ElementKind::ALL, self.clearance[&app])
                    .unwrap_or_default(),
                None => Vec::new(),
            };
            self.expose(now, Sink::Query, &outbound);
            let (shared, audit) = gate_network_share(&outbound, &sc.policy)?;
            self.expose(now, Sink::Transmit, &shared);
            self.log_audit(now, "share", audit, &mut sim.ledger);
            sim.ledger.incr("elements_shared", shared.len() as u64);
            let link = self.link_to(&decision.placement);
            let slack = spec.deadline_us.saturating_sub(estimate);
            let report = self.send(now, format!("up:{id}"), spec.payload_bytes, &link, slack, spec.deadline_us);
            Self::radio(&mut sim.ledger, sc, report.bytes_sent)?;
            match report.completed_at {
                Some(at) => {
                    sim.schedule(at, Payload::PacketArrival { task: id, generation: 0 })?;
                    self.in_flight.insert(id, InFlightTask { phase: TaskPhase::Uplink { arrives_at: at }, ..task });
                }
                None => {
                    sim.ledger.incr("offload_fallbacks", 1);
                    self.run_local(task, now, sim)?;
                }
            }
        } else {
            self.run_local(InFlightTask { generation: 0, ..task }, now, sim)?;
        }

        if instance + 1 < ts.count {
            let next = ts.start_us + (instance + 1) * ts.period_us;
            if next < sc.duration_us {
                sim.schedule(next, Payload::TaskSubmit { spec: spec_idx, instance: instance + 1 })?;
            }
        }
        Ok(())
    }

    fn live_task(&mut self, task: u64, generation: u32, ledger: &mut MetricsLedger) -> Option<InFlightTask> {
        match self.in_flight.get(&task) {
            Some(t) if t.generation == generation => Some(t.clone()),
            _ => {
                ledger.incr("stale_events", 1);
                None
            }
        }
    }

    fn packet_arrival(&mut self, task: u64, generation: u32, now: Time, sim: &mut Simulator) -> Result<(), Violation> {
        let Some(mut t) = self.live_task(task, generation, &mut sim.ledger) else { return Ok(()) };
        let TaskPhase::Uplink { .. } = t.phase else { return Ok(()) };
        let rate = t
            .placement
            .server_id()
            .and_then(|id| self.servers.iter().find(|s| s.id == id))
            .map(ServerSpec::speed)
            .unwrap_or(self.sc.device.cpu_factor);
        t.phase = TaskPhase::Exec { started: now, work_done_us: 0.0, rate };
        sim.schedule(t.exec_end().expect("exec phase"), Payload::ServerExecDone { task, generation })?;
        self.in_flight.insert(task, t);
        Ok(())
    }

    fn server_exec_done(&mut self, task: u64, generation: u32, now: Time, sim: &mut Simulator) -> Result<(), Violation> {
        let Some(mut t) = self.live_task(task, generation, &mut sim.ledger) else { return Ok(()) };
        let TaskPhase::Exec { .. } = t.phase else { return Ok(()) };
        let link = self.link_to(&t.placement);
        let elapsed = now - t.submitted_at;
        let left = t.spec.deadline_us.saturating_sub(elapsed);
        let slack = left.saturating_sub(link.latency_us + link.serialization_us(t.spec.result_bytes));
        let report = self.send(now, format!("down:{task}"), t.spec.result_bytes, &link, slack, left);
        Self::radio(&mut sim.ledger, self.sc, report.bytes_sent)?;
        match report.completed_at {
            Some(at) => {
                t.phase = TaskPhase::Downlink { arrives_at: at };
                sim.schedule(at, Payload::TaskDone { task, generation })?;
                self.in_flight.insert(task, t);
            }
            None => {
                sim.ledger.incr("offload_fallbacks", 1);
                self.run_local(t, now, sim)?;
            }
        }
        Ok(())
    }

    fn task_done(&mut self, task: u64, generation: u32, now: Time, sim: &mut Simulator) -> Result<(), Violation> {
        let Some(t) = self.live_task(task, generation, &mut sim.ledger) else { return Ok(()) };
        self.in_flight.remove(&task);
        let first = self.completed.insert(task);
        self.invariant("task_completes_once", now, first, || format!("task {task} completed twice"))?;
        let ledger = &mut sim.ledger;
        ledger.incr("tasks_completed", 1);
        ledger.incr(&format!("tasks_completed_{}", kind_label(&t.placement)), 1);
        let latency = now - t.submitted_at;
        ledger.sample("task_latency_us", now, latency as f64)?;
        if latency > t.spec.deadline_us {
            ledger.incr("task_deadline_misses", 1);
        }
        if let Some(pending) = self.recognitions.remove(&task) {
            let Some(truth) = self.scene.iter().find(|e| e.id == pending.target).map(|e| e.pose) else { return Ok(()) };
            let view_now = self.view();
            let expected = view_now.compose(&truth);
            let result = pending.pose_at_submit.compose(&truth);
            match self.tracker.compensate_recognition(&pending, &result, &view_now) {
                Ok(adjusted) => {
                    ledger.sample("overlay_error_raw_deg", now, sight_error_deg(&result, &expected))?;
                    ledger.sample("overlay_error_comp_deg", now, sight_error_deg(&adjusted, &expected))?;
                    ledger.incr("recognitions_applied", 1);
                }
                Err(_) => ledger.incr("recognitions_stale", 1),
            }
            Self::compute(ledger, self.sc, "interaction")?;
        }
        Ok(())
    }

    fn user_moved(&mut self, sample: usize, now: Time) {
        let pose = self.sc.motion[sample].pose.pose();
        let (t0, p0) = self.last_motion;
        if now > t0 {
            self.angular_speed = p0.angle_to(&pose) / ((now - t0) as f64 / 1e6);
        }
        self.last_motion = (now, pose);
        self.user_pose = pose;
        self.render_cache = None;
    }

    fn app_switch(&mut self, index: usize, now: Time, sim: &mut Simulator) -> Result<(), Violation> {
        let s = &self.sc.switches[index];
        let target = AppId(s.to);
        let bounds: Vec<Aabb> = self.world.placements_of(target).map(|(_, p)| p.bounds).collect();
        let in_view = classify_fov(&bounds, &self.frustum(), self.sc.scheduler.near_distance_m) == FovRelation::InView;
        let req = SwitchRequest {
            from: AppId(s.from),
            to: target,
            condition: s.condition,
            target_in_view: in_view,
            target_placements: bounds.len(),
        };
        let ledger = &mut sim.ledger;
        match self.sched.context_switch(req, now, ledger) {
            Ok(out) => ledger.sample("switch_cost_us", now, out.cost_us as f64)?,
            Err(e) => return Err(Violation::Invariant { name: "context_switch", at: now, detail: e.to_string() }),
        }
        Self::compute(ledger, self.sc, "scheduler")?;
        self.render_cache = None;
        self.invariant("focus", now, self.sched.check_focus_invariant(), || "focus state inconsistent".into())
    }

    fn user_input(&mut self, index: usize, now: Time, sim: &mut Simulator) -> Result<(), Violation> {
        let sc = self.sc;
        let x = &sc.inputs[index];
        let base = sc.display.base_target_radius_m;
        let margin = enlarge_target(base, self.angular_speed, self.last_mtp) - base;
        let candidates: Vec<IoCandidate> = sc
            .candidates
            .iter()
            .filter_map(|c| {
                let e = self.world.get(ElementId(c.element))?;
                Some(IoCandidate {
                    element: e.id,
                    zone: classify_zone(&e.pose.position, &self.user_pose, &sc.zones),
                    roles: c.roles,
                    bounds: e.extent.expanded(margin),
                })
            })
            .collect();
        let ray = Ray::new(Vec3::from(x.origin), Vec3::from(x.direction));
        let ledger = &mut sim.ledger;
        match route_input(&ray, &candidates) {
            Some(hit) => {
                ledger.incr("inputs_routed", 1);
                let zone = candidates.iter().find(|c| c.element == hit).expect("hit is a candidate").zone;
                ledger.incr(&format!("inputs_zone_{}", zone.as_str()), 1);
                if self.world.placements().any(|(_, p)| p.anchor_id == hit) {
                    ledger.incr("inputs_delivered", 1);
                }
            }
            None => ledger.incr("inputs_unrouted", 1),
        }
        Self::compute(ledger, sc, "interaction")?;
        Self::message(ledger, sc, "interaction")?;
        let _ = now;
        Ok(())
    }

    fn sync_tick(&mut self, round: u64, now: Time, sim: &mut Simulator) -> Result<(), Violation> {
        let sc = self.sc;
        let sync = sc.sync.as_ref().expect("sync events only scheduled with a sync section");
        let link = self.link();
        let upload = self.world.simplified_copy(sync.budget);
        let (mut shared, audit) = gate_network_share(&upload, &sc.policy)?;
        self.log_audit(now, "share", audit, &mut sim.ledger);
        if !sc.network.quality_ladder.is_empty() {
            let bitrate = adapt_rate(&link, &sc.network.quality_ladder);
            sim.ledger.sample("sync_bitrate_bps", now, bitrate as f64)?;
            let cap = (bitrate as u128 * u128::from(sync.period_us) / 8 / 1_000_000 / u128::from(sync.element_bytes.max(1))) as usize;
            shared.truncate(cap);
        }
        self.expose(now, Sink::Transmit, &shared);
        let bytes = shared.len() as u64 * sync.element_bytes;
        let report = self.send(now, format!("sync:{round}"), bytes, &link, sync.period_us, sync.period_us);
        Self::radio(&mut sim.ledger, sc, report.bytes_sent)?;
        if matches!(report.outcome, BlockOutcome::Delivered(_)) {
            sim.ledger.incr("sync_uploads", 1);
        }
        let fresh: Vec<usize> =
            (0..sync.peers.len()).filter(|i| sync.peers[*i].timestamp_us <= now && !self.merged_peers.contains(i)).collect();
        if !fresh.is_empty() {
            let models: Vec<Vec<WorldElement>> = fresh
                .iter()
                .map(|i| {
                    let p = &sync.peers[*i];
                    p.elements
                        .iter()
                        .map(|e| {
                            let mut el = e.element(p.timestamp_us);
                            el.source = p.source.clone();
                            el
                        })
                        .collect()
                })
                .collect();
            self.world.merge_remote(&models)?;
            self.merged_peers.extend(fresh);
            sim.ledger.incr("sync_merges", models.len() as u64);
        }
        Self::compute(&mut sim.ledger, sc, "world_model")?;
        let next = (round + 2) * sync.period_us;
        if next < sc.duration_us {
            sim.schedule(next, Payload::SyncTick { round: round + 1 })?;
        }
        Ok(())
    }

    fn policy_changed(&mut self, change: PolicyChange, now: Time) -> Result<(), Violation> {
        match change {
            PolicyChange::Context(c) => self.context = UserContext::parse(&c),
            PolicyChange::BystanderEnter(i) => {
                self.bystanders.insert(i, self.sc.bystanders[i as usize].region.aabb());
            }
            PolicyChange::BystanderLeave(i) => {
                self.bystanders.remove(&i);
            }
            PolicyChange::InjectTaint => {
                let bad = WorldElement::new(INJECTED_TAINT_ID, ElementKind::SemanticObject, Aabb::cube(0.0, 0.1), "debug", now)
                    .with_sensitivity(Sensitivity::Bystander);
                self.world.ingest_sensor_frame(&[bad], now)?;
            }
        }
        self.render_cache = None;
        Ok(())
    }

    fn finish(&self, sim: &mut Simulator) -> Result<(), Violation> {
        let end = sim.now();
        self.invariant("lease_disjointness", end, self.world.check_lease_disjointness(), || "overlapping write leases".into())?;
        self.invariant("placement_disjointness", end, self.world.check_placement_disjointness(), || {
            "overlapping placements of different apps".into()
        })?;
        let tainted = self.world.elements().find(|e| e.sensitivity == Sensitivity::Bystander);
        self.invariant("taint_store", end, tainted.is_none(), || format!("{:?}", tainted.map(|e| e.id)))?;
        self.invariant("edge_session", end, self.session.is_consistent(), || format!("{:?}", self.session.state))?;
        let l = &mut sim.ledger;
        l.set_gauge("battery_frac_end", self.battery_frac(l));
        l.set_gauge("world_elements", self.world.len() as f64);
        l.set_gauge("tasks_in_flight_end", self.in_flight.len() as f64);
        Ok(())
    }
}

impl EventHandler for Engine<'_> {
    type Error = Violation;

    fn handle(&mut self, sim: &mut Simulator, ev: SimEvent) -> Result<(), Violation> {
        let now = ev.time;
        match ev.payload {
            Payload::FrameTick { frame } => self.frame_tick(frame, now, sim),
            Payload::SensorFrame { frame } => self.sensor_frame(frame, now, sim),
            Payload::TaskSubmit { spec, instance } => self.task_submit(spec, instance, now, sim),
            Payload::PacketArrival { task, generation } => self.packet_arrival(task, generation, now, sim),
            Payload::ServerExecDone { task, generation } => self.server_exec_done(task, generation, now, sim),
            Payload::TaskDone { task, generation } => self.task_done(task, generation, now, sim),
            Payload::UserMoved { sample } => {
                self.user_moved(sample, now);
                Ok(())
            }
            Payload::UserInput { index } => self.user_input(index, now, sim),
            Payload::AppSwitch { index } => self.app_switch(index, now, sim),
            Payload::PolicyChanged(change) => self.policy_changed(change, now),
            Payload::HandoverTriggered { cell } => self.enter_cell(&cell, now, sim),
            Payload::SyncTick { round } => self.sync_tick(round, now, sim),
        }
    }
}

/// Runs `scenario` over its full duration. `initial_world` adds elements from a
/// persisted store. A violation stops the run; the partial output is returned.
pub fn run(scenario: &Scenario, initial_world: &[WorldElement], opts: RunOptions) -> RunOutput {
    let mut sim = Simulator::new(scenario.seed);
    if opts.keep_trace {
        sim = sim.with_trace();
    }
    let mut engine = Engine::new(scenario, initial_world, &sim, opts);
    let mut violation = engine.setup(&mut sim).err();
    if violation.is_none() {
        let end = scenario.duration_us.saturating_sub(1);
        violation = sim.run_until(end, &mut engine).err();
    }
    if violation.is_none() {
        violation = engine.finish(&mut sim).err();
    }
    let trace = sim.trace().to_vec();
    RunOutput {
        events_processed: sim.processed(),
        events_enqueued: sim.enqueued(),
        events_pending: sim.pending(),
        ledger: sim.ledger,
        decisions: engine.decisions,
        blocks: engine.blocks,
        audit: engine.audit,
        render: engine.render,
        world: engine.world.elements().cloned().collect(),
        exposures: engine.exposures,
        trace,
        violation,
    }
}
