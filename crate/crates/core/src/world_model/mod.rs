//! The single shared physical-digital world model.
//!
//! Applications never own a private copy of the environment. They lease
//! regions of the shared store: reads never conflict, writes are exclusive per
//! region, and content placed by different applications is kept disjoint.

mod element;
mod grid;
mod persist;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};
use crate::ids::{AppId, ElementId, LeaseId, PlacementId};
use crate::privacy::Clearance;
use crate::sim::Time;

pub use element::{ElementError, ElementKind, Sensitivity, WorldElement};
pub use grid::SpatialGrid;
pub use persist::{read_store, write_store, PersistError, STORE_HEADER};

pub const DEFAULT_CELL_SIZE: f64 = 0.5;
pub const RELOCATION_STEP_M: f64 = 0.05;
pub const RELOCATION_PROBES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("taint violation: bystander-tagged element {0} reached the world model")]
    TaintViolation(ElementId),
    #[error("application {0} is not registered")]
    UnknownApp(AppId),
    #[error("application {0} holds no lease covering the requested region")]
    NoLease(AppId),
    #[error("anchor {0} does not exist")]
    UnknownAnchor(ElementId),
    #[error(transparent)]
    Element(#[from] ElementError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeaseMode {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionLease {
    pub id: LeaseId,
    pub app: AppId,
    pub region: Aabb,
    pub mode: LeaseMode,
    pub granted_at: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaseDenied {
    /// Another live Write lease overlaps; `blocker` owns it.
    Conflict { blocker: AppId },
    UnknownApp(AppId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DisplayPriority {
    Safety,
    Normal,
    Ambient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContentPlacement {
    pub app: AppId,
    pub anchor_id: ElementId,
    pub bounds: Aabb,
    pub priority: DisplayPriority,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlacementOutcome {
    Placed(PlacementId),
    Relocated(PlacementId, Aabb),
    Rejected,
}

/// Deterministic square spiral around the origin, ring by ring, excluding (0, 0).
pub fn spiral_offsets(count: usize) -> Vec<(i32, i32)> {
    let mut out = Vec::with_capacity(count);
    let mut r = 1;
    while out.len() < count {
        let mut ring = Vec::with_capacity(8 * r as usize);
        for j in (-r + 1)..=r {
            ring.push((r, j));
        }
        for i in (-r..r).rev() {
            ring.push((i, r));
        }
        for j in (-r..r).rev() {
            ring.push((-r, j));
        }
        for i in (-r + 1)..=r {
            ring.push((i, -r));
        }
        out.extend(ring);
        r += 1;
    }
    out.truncate(count);
    out
}

#[derive(Debug, Clone)]
pub struct WorldModel {
    elements: BTreeMap<ElementId, WorldElement>,
    grid: SpatialGrid,
    apps: BTreeSet<AppId>,
    leases: BTreeMap<LeaseId, RegionLease>,
    next_lease: u64,
    placements: BTreeMap<PlacementId, ContentPlacement>,
    next_placement: u32,
}

impl Default for WorldModel {
    fn default() -> Self {
        WorldModel::new(DEFAULT_CELL_SIZE)
    }
}

impl WorldModel {
    pub fn new(cell_size: f64) -> Self {
        WorldModel {
            elements: BTreeMap::new(),
            grid: SpatialGrid::new(cell_size),
            apps: BTreeSet::new(),
            leases: BTreeMap::new(),
            next_lease: 1,
            placements: BTreeMap::new(),
            next_placement: 1,
        }
    }

    pub fn register_app(&mut self, app: AppId) {
        self.apps.insert(app);
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn get(&self, id: ElementId) -> Option<&WorldElement> {
        self.elements.get(&id)
    }

    pub fn elements(&self) -> impl Iterator<Item = &WorldElement> {
        self.elements.values()
    }

    fn upsert(&mut self, el: WorldElement) {
        if let Some(old) = self.elements.get(&el.id) {
            let old_extent = old.extent;
            self.grid.remove(el.id, &old_extent);
        }
        self.grid.insert(el.id, &el.extent);
        self.elements.insert(el.id, el);
    }

    /// Applies a filtered sensor frame. Updates older than the stored version
    /// are ignored. The whole frame is rejected if any element carries the
    /// Bystander taint.
    pub fn ingest_sensor_frame(&mut self, frame: &[WorldElement], now: Time) -> Result<usize, WorldError> {
        if let Some(bad) = frame.iter().find(|e| e.sensitivity == Sensitivity::Bystander) {
            return Err(WorldError::TaintViolation(bad.id));
        }
        for el in frame {
            el.validate(now)?;
        }
        let mut applied = 0;
        for el in frame {
            let newer = self.elements.get(&el.id).is_none_or(|old| el.timestamp >= old.timestamp);
            if newer {
                self.upsert(el.clone());
                applied += 1;
            }
        }
        Ok(applied)
    }

    pub fn acquire_lease(&mut self, app: AppId, region: Aabb, mode: LeaseMode, now: Time) -> Result<RegionLease, LeaseDenied> {
        if !self.apps.contains(&app) {
            return Err(LeaseDenied::UnknownApp(app));
        }
        if mode == LeaseMode::Write {
            if let Some(block) = self
                .leases
                .values()
                .find(|l| l.mode == LeaseMode::Write && l.region.overlaps(&region))
            {
                return Err(LeaseDenied::Conflict { blocker: block.app });
            }
        }
        let lease = RegionLease { id: LeaseId(self.next_lease), app, region, mode, granted_at: now };
        self.next_lease += 1;
        self.leases.insert(lease.id, lease);
        Ok(lease)
    }

    pub fn release_lease(&mut self, id: LeaseId) -> Option<RegionLease> {
        self.leases.remove(&id)
    }

    pub fn leases(&self) -> impl Iterator<Item = &RegionLease> {
        self.leases.values()
    }

    fn covering_lease(&self, app: AppId, region: &Aabb, write: bool) -> Option<&RegionLease> {
        self.leases
            .values()
            .find(|l| l.app == app && (!write || l.mode == LeaseMode::Write) && l.region.contains(region))
    }

    fn collides(&self, app: AppId, bounds: &Aabb) -> bool {
        self.placements.values().any(|p| p.app != app && p.bounds.overlaps(bounds))
    }

    /// Places content, sliding it along the anchor's plane when it would overlap
    /// another application's content. The search probes a square spiral of
    /// `RELOCATION_PROBES` offsets spaced `RELOCATION_STEP_M` apart, staying inside
    /// the lease that covers the requested bounds.
    pub fn place_content(&mut self, placement: ContentPlacement) -> Result<PlacementOutcome, WorldError> {
        let app = placement.app;
        if !self.apps.contains(&app) {
            return Err(WorldError::UnknownApp(app));
        }
        let lease_region = self
            .covering_lease(app, &placement.bounds, true)
            .ok_or(WorldError::NoLease(app))?
            .region;
        let anchor = match self.elements.get(&placement.anchor_id) {
            Some(a) if a.kind == ElementKind::Anchor => a,
            _ => return Err(WorldError::UnknownAnchor(placement.anchor_id)),
        };
        if !self.collides(app, &placement.bounds) {
            return Ok(PlacementOutcome::Placed(self.insert_placement(placement)));
        }
        let u: Vec3 = anchor.pose.orientation * Vec3::x();
        let v: Vec3 = anchor.pose.orientation * Vec3::z();
        for (i, j) in spiral_offsets(RELOCATION_PROBES) {
            let d = (u * i as f64 + v * j as f64) * RELOCATION_STEP_M;
            let candidate = placement.bounds.translated([d.x, d.y, d.z]);
            if lease_region.contains(&candidate) && !self.collides(app, &candidate) {
                let id = self.insert_placement(ContentPlacement { bounds: candidate, ..placement });
                return Ok(PlacementOutcome::Relocated(id, candidate));
            }
        }
        Ok(PlacementOutcome::Rejected)
    }

    fn insert_placement(&mut self, p: ContentPlacement) -> PlacementId {
        let id = PlacementId(self.next_placement);
        self.next_placement += 1;
        self.placements.insert(id, p);
        id
    }

    pub fn remove_placement(&mut self, id: PlacementId) -> Option<ContentPlacement> {
        self.placements.remove(&id)
    }

    pub fn placements(&self) -> impl Iterator<Item = (PlacementId, &ContentPlacement)> {
        self.placements.iter().map(|(k, v)| (*k, v))
    }

    pub fn placements_of(&self, app: AppId) -> impl Iterator<Item = (PlacementId, &ContentPlacement)> {
        self.placements().filter(move |(_, p)| p.app == app)
    }

    /// Elements of the requested kinds whose extent touches `region`, sorted by id.
    /// Bystander-tagged elements are never returned; Private ones only with clearance.
    pub fn query_primitives(
        &self,
        app: AppId,
        region: &Aabb,
        kinds: &[ElementKind],
        clearance: Clearance,
    ) -> Result<Vec<WorldElement>, WorldError> {
        if !self.apps.contains(&app) {
            return Err(WorldError::UnknownApp(app));
        }
        if self.covering_lease(app, region, false).is_none() {
            return Err(WorldError::NoLease(app));
        }
        Ok(self
            .grid
            .candidates(region)
            .into_iter()
            .filter_map(|id| self.elements.get(&id))
            .filter(|e| kinds.contains(&e.kind) && e.extent.intersects(region))
            .filter(|e| clearance.may_read(e.sensitivity))
            .cloned()
            .collect())
    }

    /// Merges remote device models into the store with the precedence rule of
    /// [`merge_models`]. Returns the resulting element count.
    pub fn merge_remote(&mut self, models: &[Vec<WorldElement>]) -> Result<usize, WorldError> {
        for el in models.iter().flatten() {
            if el.sensitivity == Sensitivity::Bystander {
                return Err(WorldError::TaintViolation(el.id));
            }
        }
        for el in merge_models(models) {
            let wins = self.elements.get(&el.id).is_none_or(|old| el.precedence(old).is_gt());
            if wins {
                self.upsert(el);
            }
        }
        Ok(self.elements.len())
    }

    /// At most `budget` elements ranked Anchor > Plane > SemanticObject >
    /// FeaturePoint, then most recent first, then by id.
    pub fn simplified_copy(&self, budget: usize) -> Vec<WorldElement> {
        let mut all: Vec<&WorldElement> = self.elements.values().collect();
        all.sort_by(|a, b| {
            b.kind
                .retention_rank()
                .cmp(&a.kind.retention_rank())
                .then(b.timestamp.cmp(&a.timestamp))
                .then(a.id.cmp(&b.id))
        });
        all.into_iter().take(budget).cloned().collect()
    }

    /// Write leases pairwise disjoint.
    pub fn check_lease_disjointness(&self) -> bool {
        let writes: Vec<&RegionLease> = self.leases.values().filter(|l| l.mode == LeaseMode::Write).collect();
        writes
            .iter()
            .enumerate()
            .all(|(i, a)| writes[i + 1..].iter().all(|b| !a.region.overlaps(&b.region)))
    }

    /// Placements of distinct apps pairwise disjoint.
    pub fn check_placement_disjointness(&self) -> bool {
        let ps: Vec<&ContentPlacement> = self.placements.values().collect();
        ps.iter()
            .enumerate()
            .all(|(i, a)| ps[i + 1..].iter().all(|b| a.app == b.app || !a.bounds.overlaps(&b.bounds)))
    }
}

/// Union by id over any number of device models. Conflicts keep the version
/// with the latest timestamp, ties going to the smallest source id. The rule
/// is a total order, so the result is independent of argument order.
pub fn merge_models(models: &[Vec<WorldElement>]) -> Vec<WorldElement> {
    let mut out: BTreeMap<ElementId, WorldElement> = BTreeMap::new();
    for el in models.iter().flatten() {
        match out.get(&el.id) {
            Some(cur) if !el.precedence(cur).is_gt() => {}
            _ => {
                out.insert(el.id, el.clone());
            }
        }
    }
    out.into_values().collect()
}
