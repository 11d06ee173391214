use std::collections::{BTreeSet, HashMap};

use crate::geometry::Aabb;
use crate::ids::ElementId;

type Cell = (i64, i64, i64);

/// Elements spanning more cells than this live in an overflow list instead.
const MAX_CELLS_PER_ENTRY: u64 = 4096;
/// Queries spanning more cells than this degrade to a scan of all entries.
const MAX_CELLS_PER_QUERY: u64 = 32_768;

/// Uniform grid over world space. Holds ids only; the caller filters the
/// candidates against exact extents.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cell: f64,
    cells: HashMap<Cell, Vec<ElementId>>,
    oversized: BTreeSet<ElementId>,
    all: BTreeSet<ElementId>,
}

impl SpatialGrid {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "grid cell size must be positive");
        SpatialGrid { cell: cell_size, cells: HashMap::new(), oversized: BTreeSet::new(), all: BTreeSet::new() }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    fn range(&self, b: &Aabb) -> (Cell, Cell, u64) {
        let lo = |v: f64| (v / self.cell).floor() as i64;
        let min = (lo(b.min[0]), lo(b.min[1]), lo(b.min[2]));
        let max = (lo(b.max[0]), lo(b.max[1]), lo(b.max[2]));
        let span = |a: i64, b: i64| (b - a + 1).max(0) as u64;
        let n = span(min.0, max.0)
            .saturating_mul(span(min.1, max.1))
            .saturating_mul(span(min.2, max.2));
        (min, max, n)
    }

    fn for_cells(min: Cell, max: Cell, mut f: impl FnMut(Cell)) {
        for x in min.0..=max.0 {
            for y in min.1..=max.1 {
                for z in min.2..=max.2 {
                    f((x, y, z));
                }
            }
        }
    }

    pub fn insert(&mut self, id: ElementId, extent: &Aabb) {
        self.all.insert(id);
        let (min, max, n) = self.range(extent);
        if n > MAX_CELLS_PER_ENTRY {
            self.oversized.insert(id);
            return;
        }
        Self::for_cells(min, max, |c| self.cells.entry(c).or_default().push(id));
    }

    pub fn remove(&mut self, id: ElementId, extent: &Aabb) {
        self.all.remove(&id);
        if self.oversized.remove(&id) {
            return;
        }
        let (min, max, _) = self.range(extent);
        Self::for_cells(min, max, |c| {
            if let Some(v) = self.cells.get_mut(&c) {
                v.retain(|e| *e != id);
                if v.is_empty() {
                    self.cells.remove(&c);
                }
            }
        });
    }

    /// Ids whose cells touch `region`, sorted and deduplicated. A superset of the
    /// true intersection set.
    pub fn candidates(&self, region: &Aabb) -> Vec<ElementId> {
        let (min, max, n) = self.range(region);
        if n > MAX_CELLS_PER_QUERY || n as usize > self.cells.len() * 4 {
            return self.all.iter().copied().collect();
        }
        let mut out: BTreeSet<ElementId> = self.oversized.clone();
        Self::for_cells(min, max, |c| {
            if let Some(v) = self.cells.get(&c) {
                out.extend(v.iter().copied());
            }
        });
        out.into_iter().collect()
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_cover_touching_boxes() {
        let mut g = SpatialGrid::new(0.5);
        g.insert(ElementId(1), &Aabb::cube(0.0, 0.2));
        g.insert(ElementId(2), &Aabb::cube(3.0, 3.2));
        g.insert(ElementId(3), &Aabb::cube(-1e6, 1e6));
        let c = g.candidates(&Aabb::cube(0.1, 0.3));
        assert!(c.contains(&ElementId(1)));
        assert!(c.contains(&ElementId(3)));
        assert!(!c.contains(&ElementId(2)));
        g.remove(ElementId(1), &Aabb::cube(0.0, 0.2));
        assert!(!g.candidates(&Aabb::cube(0.1, 0.3)).contains(&ElementId(1)));
        assert_eq!(g.len(), 2);
    }
}
