//! Per-frame selection of rendered content under a density budget.
//!
//! Coverage is the union of the bounding cones of the placements, clipped to
//! the view pyramid, as a fraction of the pyramid's solid angle. The union is
//! integrated over a fixed solid-angle-weighted grid of view directions, so the
//! result is deterministic and overlapping items are not counted twice.

use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, Frustum, Vec3};
use crate::ids::{AppId, PlacementId};
use crate::world_model::{ContentPlacement, DisplayPriority};

pub const COVERAGE_GRID: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayBudget {
    pub max_items: usize,
    pub max_solid_angle: f64,
}

impl Default for DisplayBudget {
    fn default() -> Self {
        DisplayBudget { max_items: 7, max_solid_angle: 0.35 }
    }
}

impl DisplayBudget {
    pub fn is_valid(&self) -> bool {
        self.max_items >= 1 && self.max_solid_angle > 0.0 && self.max_solid_angle <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderItem {
    pub placement: PlacementId,
    pub app: AppId,
    pub priority: DisplayPriority,
    pub bounds: Aabb,
    pub relevance: f64,
}

impl RenderItem {
    pub fn from_placement(id: PlacementId, p: &ContentPlacement, relevance: f64) -> Self {
        RenderItem { placement: id, app: p.app, priority: p.priority, bounds: p.bounds, relevance }
    }
}

/// Bounding cone of a box as seen from `eye`: (unit axis, cos of half-angle).
/// `None` when the eye is inside the bounding sphere (the cone covers everything).
fn bounding_cone(eye: &Vec3, b: &Aabb) -> Option<(Vec3, f64)> {
    let c = Vec3::from(b.center());
    let s = b.size();
    let r = 0.5 * (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
    let to = c - eye;
    let d = to.norm();
    if d <= r {
        return None;
    }
    let half = (r / d).asin();
    Some((to / d, half.cos()))
}

/// Fixed sample grid over the view pyramid with solid-angle weights.
struct DirectionGrid {
    dirs: Vec<Vec3>,
    weights: Vec<f64>,
    total: f64,
}

impl DirectionGrid {
    fn new(frustum: &Frustum, n: usize) -> Self {
        let (th, tv) = (frustum.half_h.tan(), frustum.half_v.tan());
        let mut dirs = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for i in 0..n {
            let u = th * (2.0 * (i as f64 + 0.5) / n as f64 - 1.0);
            for j in 0..n {
                let v = tv * (2.0 * (j as f64 + 0.5) / n as f64 - 1.0);
                let local = Vec3::new(u, v, -1.0);
                // dΩ = du dv / (1 + u² + v²)^{3/2}
                let w = (1.0 + u * u + v * v).powf(-1.5);
                dirs.push(frustum.eye.orientation * local.normalize());
                weights.push(w);
            }
        }
        let total = weights.iter().sum();
        DirectionGrid { dirs, weights, total }
    }
}

/// Incrementally grown union of covered directions.
struct CoverageMask<'a> {
    grid: &'a DirectionGrid,
    eye: Vec3,
    covered: Vec<bool>,
    weight: f64,
}

impl<'a> CoverageMask<'a> {
    fn new(grid: &'a DirectionGrid, eye: Vec3) -> Self {
        CoverageMask { grid, eye, covered: vec![false; grid.dirs.len()], weight: 0.0 }
    }

    fn fraction(&self) -> f64 {
        self.weight / self.grid.total
    }

    /// Fraction after adding `b`, without committing.
    fn with(&self, b: &Aabb) -> f64 {
        self.fraction() + self.gain(b) / self.grid.total
    }

    fn gain(&self, b: &Aabb) -> f64 {
        let cone = bounding_cone(&self.eye, b);
        self.grid
            .dirs
            .iter()
            .zip(&self.grid.weights)
            .zip(&self.covered)
            .filter(|((d, _), c)| !**c && cone.is_none_or(|(axis, cos_half)| d.dot(&axis) >= cos_half))
            .map(|((_, w), _)| *w)
            .sum()
    }

    fn add(&mut self, b: &Aabb) {
        let cone = bounding_cone(&self.eye, b);
        for (k, d) in self.grid.dirs.iter().enumerate() {
            if !self.covered[k] && cone.is_none_or(|(axis, cos_half)| d.dot(&axis) >= cos_half) {
                self.covered[k] = true;
                self.weight += self.grid.weights[k];
            }
        }
    }
}

/// Solid-angle fraction of the view covered by `items`. Empty list gives 0.
pub fn coverage(items: &[RenderItem], frustum: &Frustum) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let grid = DirectionGrid::new(frustum, COVERAGE_GRID);
    let mut mask = CoverageMask::new(&grid, frustum.eye.position);
    for it in items {
        mask.add(&it.bounds);
    }
    mask.fraction()
}

/// Safety items are always rendered and exempt from the budget. Other items in
/// view are ranked by relevance (descending, ties to the smaller app id, then
/// placement id) and admitted while both the item cap and the coverage cap hold;
/// an item that would break the coverage cap is skipped and later, smaller items
/// are still considered.
pub fn select_visible(candidates: &[RenderItem], frustum: &Frustum, budget: &DisplayBudget) -> Vec<RenderItem> {
    let mut out: Vec<RenderItem> =
        candidates.iter().filter(|c| c.priority == DisplayPriority::Safety).cloned().collect();
    let mut rest: Vec<&RenderItem> = candidates
        .iter()
        .filter(|c| c.priority != DisplayPriority::Safety && frustum.intersects_aabb(&c.bounds))
        .collect();
    rest.sort_by(|a, b| {
        b.relevance
            .total_cmp(&a.relevance)
            .then(a.app.cmp(&b.app))
            .then(a.placement.cmp(&b.placement))
    });
    let grid = DirectionGrid::new(frustum, COVERAGE_GRID);
    let mut mask = CoverageMask::new(&grid, frustum.eye.position);
    let mut admitted = 0;
    for item in rest {
        if admitted >= budget.max_items {
            break;
        }
        if mask.with(&item.bounds) > budget.max_solid_angle + 1e-12 {
            continue;
        }
        mask.add(&item.bounds);
        admitted += 1;
        out.push(item.clone());
    }
    out
}
