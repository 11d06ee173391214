//! Process table and frame-budget scheduler.
//!
//! Apps are ranked by how their content relates to the user's view: content in
//! view is served first, content near the user but concealed gets pre-compute
//! time from what is left, and far content only runs on spare budget.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Frustum};
use crate::ids::AppId;
use crate::sim::{MetricsLedger, Time, DEADLINE_MISSES, TRACKING_RECOVERY_EVENTS, TRACKING_RECOVERY_TOTAL};

pub const INTERFRAME_60FPS_US: u64 = 16_667;
pub const INTERFRAME_30FPS_US: u64 = 33_333;
pub const DEFAULT_NEAR_DISTANCE_M: f64 = 3.0;
/// Pre-computation can shave at most this share off the next in-view demand.
pub const MIN_DEMAND_FRACTION: f64 = 0.2;

pub const CONTEXT_SWITCHES: &str = "context_switches";
pub const CONTEXT_SWITCH_TOTAL: &str = "context_switch_total";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedError {
    #[error("unknown app {0}")]
    UnknownApp(AppId),
    #[error("cannot switch from {0} to itself")]
    SameApp(AppId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FovRelation {
    InView,
    NearConcealed,
    Far,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcState {
    Running,
    Background,
    Suspended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ModelMode {
    #[default]
    SharedModel,
    IsolatedModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionCondition {
    Static,
    Moving,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppProcess {
    pub id: AppId,
    pub state: ProcState,
    pub fov_relation: FovRelation,
    pub demand_us: u64,
    /// Time banked by pre-computation while NearConcealed.
    pub precompute_credit_us: u64,
    /// Tracking recovers at this time (isolated model only).
    pub recovery_until: Option<Time>,
}

impl AppProcess {
    pub fn new(id: AppId, demand_us: u64) -> Self {
        assert!(demand_us > 0, "per-frame demand must be positive");
        AppProcess {
            id,
            state: ProcState::Running,
            fov_relation: FovRelation::Far,
            demand_us,
            precompute_credit_us: 0,
            recovery_until: None,
        }
    }

    /// Demand when in view, after pre-computed work is subtracted.
    pub fn effective_demand(&self) -> u64 {
        if self.fov_relation != FovRelation::InView {
            return self.demand_us;
        }
        let floor = (self.demand_us as f64 * MIN_DEMAND_FRACTION).ceil() as u64;
        self.demand_us.saturating_sub(self.precompute_credit_us).max(floor)
    }

    fn schedulable(&self) -> bool {
        self.state != ProcState::Suspended
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameBudget {
    pub interframe_us: u64,
    pub spent_us: u64,
}

impl FrameBudget {
    pub fn fresh(interframe_us: u64) -> Self {
        FrameBudget { interframe_us, spent_us: 0 }
    }

    pub fn for_rate(fps: u32) -> Self {
        FrameBudget::fresh(if fps == 30 { INTERFRAME_30FPS_US } else { INTERFRAME_60FPS_US })
    }

    pub fn remaining(&self) -> u64 {
        self.interframe_us - self.spent_us
    }
}

/// Classifies an app from its placement bounds. No placements means Far.
pub fn classify_fov(placements: &[Aabb], frustum: &Frustum, near_distance: f64) -> FovRelation {
    if placements.iter().any(|b| frustum.intersects_aabb(b)) {
        FovRelation::InView
    } else if placements.iter().any(|b| b.distance_to(&frustum.eye.position) <= near_distance) {
        FovRelation::NearConcealed
    } else {
        FovRelation::Far
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub app: AppId,
    pub class: FovRelation,
    pub requested_us: u64,
    pub granted_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSchedule {
    /// Execution order.
    pub grants: Vec<Grant>,
    pub deadline_misses: u32,
    pub budget: FrameBudget,
}

impl FrameSchedule {
    pub fn granted_to(&self, app: AppId) -> u64 {
        self.grants.iter().filter(|g| g.app == app).map(|g| g.granted_us).sum()
    }
}

/// Round-robin cursors, one per class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundRobin {
    cursors: [u64; 3],
}

fn class_index(c: FovRelation) -> usize {
    match c {
        FovRelation::InView => 0,
        FovRelation::NearConcealed => 1,
        FovRelation::Far => 2,
    }
}

/// Greedy class-ordered fill of one frame. Within a class apps are taken in id
/// order rotated by the class cursor, which advances once per frame.
pub fn schedule_frame(apps: &[AppProcess], budget: FrameBudget, rr: &mut RoundRobin) -> FrameSchedule {
    let mut budget = budget;
    let mut grants = Vec::new();
    let mut misses = 0;
    for class in [FovRelation::InView, FovRelation::NearConcealed, FovRelation::Far] {
        let mut members: Vec<&AppProcess> =
            apps.iter().filter(|a| a.schedulable() && a.fov_relation == class).collect();
        if members.is_empty() {
            continue;
        }
        members.sort_by_key(|a| a.id);
        let k = members.len();
        let cursor = &mut rr.cursors[class_index(class)];
        let start = (*cursor % k as u64) as usize;
        *cursor += 1;
        members.rotate_left(start);
        for app in members {
            let want = app.effective_demand();
            let give = want.min(budget.remaining());
            budget.spent_us += give;
            if class == FovRelation::InView && give < want {
                misses += 1;
            }
            grants.push(Grant { app: app.id, class, requested_us: want, granted_us: give });
        }
    }
    FrameSchedule { grants, deadline_misses: misses, budget }
}

/// Normal(mean, stdev) recovery times per motion condition plus the
/// out-of-view penalty, all in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryModel {
    pub static_mean_us: f64,
    pub static_stdev_us: f64,
    pub moving_mean_us: f64,
    pub moving_stdev_us: f64,
    pub out_of_view_penalty_us: u64,
}

impl Default for RecoveryModel {
    fn default() -> Self {
        RecoveryModel {
            static_mean_us: 1_350_000.0,
            static_stdev_us: 290_000.0,
            moving_mean_us: 1_530_000.0,
            moving_stdev_us: 490_000.0,
            out_of_view_penalty_us: 3_000_000,
        }
    }
}

impl RecoveryModel {
    pub fn sample(&self, cond: MotionCondition, target_in_view: bool, rng: &mut impl Rng) -> u64 {
        let (mean, sd) = match cond {
            MotionCondition::Static => (self.static_mean_us, self.static_stdev_us),
            MotionCondition::Moving => (self.moving_mean_us, self.moving_stdev_us),
        };
        let base = if sd > 0.0 {
            Normal::new(mean, sd).expect("finite stdev").sample(rng)
        } else {
            mean
        };
        let base = base.max(0.0).round() as u64;
        if target_in_view {
            base
        } else {
            base + self.out_of_view_penalty_us
        }
    }
}

/// Cost of re-binding an app's content inside the shared model: a fixed part
/// plus a per-placement part, never more than one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RebindModel {
    pub base_us: u64,
    pub per_placement_us: u64,
}

impl Default for RebindModel {
    fn default() -> Self {
        RebindModel { base_us: 2_000, per_placement_us: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchRequest {
    pub from: AppId,
    pub to: AppId,
    pub condition: MotionCondition,
    /// Whether the target app's content is inside the camera view.
    pub target_in_view: bool,
    pub target_placements: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchOutcome {
    pub cost_us: u64,
    pub tracking_lost: bool,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    apps: BTreeMap<AppId, AppProcess>,
    mode: ModelMode,
    focused: Option<AppId>,
    interframe_us: u64,
    rr: RoundRobin,
    pub recovery: RecoveryModel,
    pub rebind: RebindModel,
    rng: ChaCha8Rng,
}

impl Scheduler {
    pub fn new(mode: ModelMode, interframe_us: u64, rng: ChaCha8Rng) -> Self {
        Scheduler {
            apps: BTreeMap::new(),
            mode,
            focused: None,
            interframe_us,
            rr: RoundRobin::default(),
            recovery: RecoveryModel::default(),
            rebind: RebindModel::default(),
            rng,
        }
    }

    pub fn mode(&self) -> ModelMode {
        self.mode
    }

    pub fn interframe_us(&self) -> u64 {
        self.interframe_us
    }

    pub fn focused(&self) -> Option<AppId> {
        self.focused
    }

    /// Registers an app. In the isolated model only the first app runs; the
    /// rest start suspended.
    pub fn register(&mut self, mut app: AppProcess) {
        if self.mode == ModelMode::IsolatedModel {
            if self.focused.is_none() {
                self.focused = Some(app.id);
                app.state = ProcState::Running;
            } else {
                app.state = ProcState::Suspended;
            }
        }
        self.apps.insert(app.id, app);
    }

    pub fn app(&self, id: AppId) -> Option<&AppProcess> {
        self.apps.get(&id)
    }

    pub fn apps(&self) -> impl Iterator<Item = &AppProcess> {
        self.apps.values()
    }

    pub fn set_fov(&mut self, id: AppId, rel: FovRelation) {
        if let Some(a) = self.apps.get_mut(&id) {
            a.fov_relation = rel;
        }
    }

    /// Schedules one frame, updates pre-compute credit and counts misses.
    pub fn run_frame(&mut self, ledger: &mut MetricsLedger) -> FrameSchedule {
        let snapshot: Vec<AppProcess> = self.apps.values().cloned().collect();
        let sched = schedule_frame(&snapshot, FrameBudget::fresh(self.interframe_us), &mut self.rr);
        for g in &sched.grants {
            let Some(app) = self.apps.get_mut(&g.app) else { continue };
            match g.class {
                FovRelation::InView => app.precompute_credit_us = 0,
                FovRelation::NearConcealed => {
                    let cap = app.demand_us - (app.demand_us as f64 * MIN_DEMAND_FRACTION).ceil() as u64;
                    app.precompute_credit_us = (app.precompute_credit_us + g.granted_us).min(cap);
                }
                FovRelation::Far => {}
            }
        }
        ledger.incr(DEADLINE_MISSES, u64::from(sched.deadline_misses));
        sched
    }

    pub fn context_switch(&mut self, req: SwitchRequest, now: Time, ledger: &mut MetricsLedger) -> Result<SwitchOutcome, SchedError> {
        for id in [req.from, req.to] {
            if !self.apps.contains_key(&id) {
                return Err(SchedError::UnknownApp(id));
            }
        }
        if req.from == req.to {
            return Err(SchedError::SameApp(req.from));
        }
        let outcome = match self.mode {
            ModelMode::SharedModel => {
                let cost = (self.rebind.base_us + self.rebind.per_placement_us * req.target_placements as u64)
                    .min(self.interframe_us);
                SwitchOutcome { cost_us: cost, tracking_lost: false }
            }
            ModelMode::IsolatedModel => {
                let cost = self.recovery.sample(req.condition, req.target_in_view, &mut self.rng);
                ledger.incr(TRACKING_RECOVERY_EVENTS, 1);
                ledger.add_time(TRACKING_RECOVERY_TOTAL, cost);
                if let Some(f) = self.apps.get_mut(&req.from) {
                    f.state = ProcState::Suspended;
                    f.recovery_until = None;
                }
                let t = self.apps.get_mut(&req.to).expect("checked above");
                t.state = ProcState::Running;
                t.recovery_until = Some(now + cost);
                self.focused = Some(req.to);
                SwitchOutcome { cost_us: cost, tracking_lost: true }
            }
        };
        ledger.incr(CONTEXT_SWITCHES, 1);
        ledger.add_time(CONTEXT_SWITCH_TOTAL, outcome.cost_us);
        Ok(outcome)
    }

    /// Exactly one Running app in the isolated model; recovery deadlines only there.
    pub fn check_focus_invariant(&self) -> bool {
        match self.mode {
            ModelMode::IsolatedModel => {
                self.apps.is_empty() || self.apps.values().filter(|a| a.state == ProcState::Running).count() == 1
            }
            ModelMode::SharedModel => self.apps.values().all(|a| a.recovery_until.is_none()),
        }
    }
}
