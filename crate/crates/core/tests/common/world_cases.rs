//! World-model property cases driven by a seed. Shared by the property suite
//! and the acceptance run.

use rand::Rng;
use xros_core::geometry::Aabb;
use xros_core::ids::{AppId, ElementId};
use xros_core::privacy::Clearance;
use xros_core::world_model::{
    merge_models, ContentPlacement, DisplayPriority, ElementKind, LeaseMode, PlacementOutcome, WorldElement, WorldModel,
};

use super::oracles::{merge_oracle, pairwise_disjoint, query_oracle, random_box, random_model, random_store};
use super::rng;

type Case = Result<(), String>;

fn check(ok: bool, what: impl FnOnce() -> String) -> Case {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

pub fn model_with_apps(n: u32) -> WorldModel {
    let mut w = WorldModel::default();
    for a in 1..=n {
        w.register_app(AppId(a));
    }
    w
}

/// Random acquire/release traffic; Write leases must never share volume.
pub fn lease_case(seed: u64, ops: usize) -> Case {
    let mut rng = rng(seed);
    let mut w = model_with_apps(4);
    let mut live = Vec::new();
    for step in 0..ops {
        if !live.is_empty() && rng.random_bool(0.3) {
            let i = rng.random_range(0..live.len());
            w.release_lease(live.swap_remove(i));
        } else {
            let app = AppId(rng.random_range(1..=4));
            let mode = if rng.random_bool(0.7) { LeaseMode::Write } else { LeaseMode::Read };
            if let Ok(l) = w.acquire_lease(app, random_box(&mut rng, 4.0, 1.5), mode, 0) {
                live.push(l.id);
            }
        }
        let writes: Vec<(u32, Aabb)> =
            w.leases().filter(|l| l.mode == LeaseMode::Write).enumerate().map(|(i, l)| (i as u32, l.region)).collect();
        check(pairwise_disjoint(&writes), || format!("seed {seed}: overlapping write leases after step {step}"))?;
    }
    Ok(())
}

/// Leases churn while placements persist, so apps keep landing on each
/// other's content. Placements of different apps must stay disjoint.
pub fn placement_case(seed: u64, ops: usize) -> Case {
    let mut rng = rng(seed);
    let mut w = model_with_apps(3);
    let anchor = WorldElement::new(1, ElementKind::Anchor, Aabb::from_center([0.0; 3], [0.01; 3]), "dev", 0);
    w.ingest_sensor_frame(&[anchor], 0).map_err(|e| e.to_string())?;
    for step in 0..ops {
        let roll: f64 = rng.random();
        if roll < 0.25 {
            let app = AppId(rng.random_range(1..=3));
            let _ = w.acquire_lease(app, random_box(&mut rng, 1.0, 1.2), LeaseMode::Write, 0);
        } else if roll < 0.4 {
            let ids: Vec<_> = w.leases().map(|l| l.id).collect();
            if !ids.is_empty() {
                w.release_lease(ids[rng.random_range(0..ids.len())]);
            }
        } else if roll < 0.45 {
            let ids: Vec<_> = w.placements().map(|(id, _)| id).collect();
            if !ids.is_empty() {
                w.remove_placement(ids[rng.random_range(0..ids.len())]);
            }
        } else {
            let writes: Vec<(AppId, Aabb)> =
                w.leases().filter(|l| l.mode == LeaseMode::Write).map(|l| (l.app, l.region)).collect();
            if writes.is_empty() {
                continue;
            }
            let (app, region) = writes[rng.random_range(0..writes.len())];
            let half: [f64; 3] = std::array::from_fn(|i| rng.random_range(0.0..(region.max[i] - region.min[i]) / 2.0).max(0.005));
            let c: [f64; 3] = std::array::from_fn(|i| {
                let (lo, hi) = (region.min[i] + half[i], region.max[i] - half[i]);
                if lo < hi {
                    rng.random_range(lo..hi)
                } else {
                    (region.min[i] + region.max[i]) / 2.0
                }
            });
            let bounds = Aabb::from_center(c, half);
            if !region.contains(&bounds) {
                continue;
            }
            let p = ContentPlacement { app, anchor_id: ElementId(1), bounds, priority: DisplayPriority::Normal };
            if let PlacementOutcome::Relocated(_, b) = w.place_content(p).map_err(|e| e.to_string())? {
                check(region.contains(&b), || format!("seed {seed}: relocation left the lease at step {step}"))?;
            }
        }
        let all: Vec<(u32, Aabb)> = w.placements().map(|(_, p)| (p.app.0, p.bounds)).collect();
        check(pairwise_disjoint(&all), || format!("seed {seed}: overlapping placements after step {step}"))?;
    }
    Ok(())
}

/// Merge equals the brute-force resolution and ignores order and repeats.
pub fn merge_case(seed: u64) -> Case {
    let mut rng = rng(seed);
    let (a, b, c) = (random_model(&mut rng, 12, 16), random_model(&mut rng, 12, 16), random_model(&mut rng, 12, 16));
    let abc = merge_models(&[a.clone(), b.clone(), c.clone()]);
    check(abc == merge_oracle(&[a.clone(), b.clone(), c.clone()]), || format!("seed {seed}: merge differs from oracle"))?;
    check(merge_models(&[a.clone(), b.clone()]) == merge_models(&[b.clone(), a.clone()]), || {
        format!("seed {seed}: merge not commutative")
    })?;
    let left = merge_models(&[merge_models(&[a.clone(), b.clone()]), c.clone()]);
    let right = merge_models(&[a.clone(), merge_models(&[b, c])]);
    check(left == right && left == abc, || format!("seed {seed}: merge not associative"))?;
    check(merge_models(&[a.clone(), a.clone()]) == merge_models(&[a]), || format!("seed {seed}: merge not idempotent"))
}

/// Indexed query equals a linear scan of the store.
pub fn query_case(seed: u64, n: usize, private: bool) -> Case {
    let mut rng = rng(seed);
    let store = random_store(&mut rng, n, 10.0);
    let mut w = model_with_apps(1);
    w.ingest_sensor_frame(&store, 0).map_err(|e| e.to_string())?;
    let region = random_box(&mut rng, 8.0, 6.0);
    w.acquire_lease(AppId(1), region, LeaseMode::Read, 0).map_err(|e| format!("{e:?}"))?;
    let kinds: Vec<ElementKind> = ElementKind::ALL.into_iter().filter(|_| rng.random_bool(0.7)).collect();
    let clearance = if private { Clearance::Private } else { Clearance::Standard };
    let got: Vec<ElementId> =
        w.query_primitives(AppId(1), &region, &kinds, clearance).map_err(|e| e.to_string())?.iter().map(|e| e.id).collect();
    check(got == query_oracle(&store, &region, &kinds, clearance), || format!("seed {seed}: query differs from scan"))
}
