mod common;

use common::oracles::{query_oracle, random_box, random_store, version};
use common::world_cases::{lease_case, merge_case, model_with_apps, placement_case, query_case};
use proptest::prelude::*;
use rand::Rng;
use xros_core::geometry::Aabb;
use xros_core::ids::{AppId, ElementId};
use xros_core::privacy::Clearance;
use xros_core::world_model::{
    read_store, write_store, ContentPlacement, DisplayPriority, ElementKind, LeaseMode, PlacementOutcome, Sensitivity,
    WorldElement, WorldError,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn write_leases_stay_disjoint(seed in any::<u64>(), ops in 1usize..80) {
        prop_assert_eq!(lease_case(seed, ops), Ok(()));
    }

    #[test]
    fn placements_of_distinct_apps_stay_disjoint(seed in any::<u64>(), ops in 1usize..80) {
        prop_assert_eq!(placement_case(seed, ops), Ok(()));
    }

    #[test]
    fn merge_matches_brute_force_and_is_order_free(seed in any::<u64>()) {
        prop_assert_eq!(merge_case(seed), Ok(()));
    }

    #[test]
    fn query_equals_linear_scan(seed in any::<u64>(), n in 0usize..600, private in any::<bool>()) {
        prop_assert_eq!(query_case(seed, n, private), Ok(()));
    }

    #[test]
    fn bystanders_never_enter_or_leave(seed in any::<u64>(), n in 1usize..50) {
        let mut rng = common::rng(seed);
        let mut frame = random_store(&mut rng, n, 5.0);
        let victim = rng.random_range(0..n);
        frame[victim].sensitivity = Sensitivity::Bystander;
        let mut w = model_with_apps(1);
        let err = w.ingest_sensor_frame(&frame, 0).unwrap_err();
        prop_assert_eq!(err, WorldError::TaintViolation(frame[victim].id));
        prop_assert!(w.is_empty());
        prop_assert!(matches!(w.merge_remote(&[frame.clone()]), Err(WorldError::TaintViolation(_))));
        prop_assert!(w.is_empty());
    }

    #[test]
    fn store_round_trips(seed in any::<u64>(), n in 0usize..80) {
        let mut rng = common::rng(seed);
        let mut els = random_store(&mut rng, n, 30.0);
        for e in &mut els {
            if rng.random_bool(0.3) {
                e.labels.push(format!("tag{}", rng.random_range(0..5)));
            }
            e.timestamp = rng.random_range(0..1_000_000);
            e.source = format!("dev-{}", rng.random_range(0..3));
        }
        let text = write_store(&els).unwrap();
        prop_assert_eq!(read_store(&text).unwrap(), els);
    }
}

#[test]
fn query_at_ten_thousand_elements() {
    let mut rng = common::rng(10_000);
    let store = random_store(&mut rng, 10_000, 25.0);
    let mut w = model_with_apps(1);
    w.ingest_sensor_frame(&store, 0).unwrap();
    let everything = Aabb::cube(-100.0, 100.0);
    w.acquire_lease(AppId(1), everything, LeaseMode::Read, 0).unwrap();
    for _ in 0..50 {
        let region = random_box(&mut rng, 25.0, 5.0);
        let got: Vec<ElementId> =
            w.query_primitives(AppId(1), &region, &ElementKind::ALL, Clearance::Private).unwrap().iter().map(|e| e.id).collect();
        assert_eq!(got, query_oracle(&store, &region, &ElementKind::ALL, Clearance::Private));
    }
    let all = w.query_primitives(AppId(1), &everything, &ElementKind::ALL, Clearance::Private).unwrap();
    assert_eq!(all.len(), 10_000);
}

#[test]
fn hundred_elements_whole_space() {
    let mut rng = common::rng(100);
    let store = random_store(&mut rng, 100, 10.0);
    let mut w = model_with_apps(1);
    w.ingest_sensor_frame(&store, 0).unwrap();
    let space = Aabb::cube(-50.0, 50.0);
    w.acquire_lease(AppId(1), space, LeaseMode::Read, 0).unwrap();
    let got = w.query_primitives(AppId(1), &space, &ElementKind::ALL, Clearance::Private).unwrap();
    assert_eq!(got.len(), 100);
}

#[test]
fn relocation_gives_up_when_every_probe_collides() {
    // app 2's lease is exactly its requested box, so no probe stays inside it
    let mut w = model_with_apps(2);
    let anchor = WorldElement::new(1, ElementKind::Anchor, Aabb::from_center([0.0; 3], [0.01; 3]), "dev", 0);
    w.ingest_sensor_frame(&[anchor], 0).unwrap();
    let spot = Aabb::from_center([0.0, 0.0, -1.0], [0.2; 3]);
    let lease_a = w.acquire_lease(AppId(1), spot, LeaseMode::Write, 0).unwrap();
    let p = |app| ContentPlacement { app: AppId(app), anchor_id: ElementId(1), bounds: spot, priority: DisplayPriority::Normal };
    assert!(matches!(w.place_content(p(1)).unwrap(), PlacementOutcome::Placed(_)));
    w.release_lease(lease_a.id);
    w.acquire_lease(AppId(2), spot, LeaseMode::Write, 0).unwrap();
    // enumerate the probes by hand: each one leaves the lease
    for (i, j) in xros_core::world_model::spiral_offsets(32) {
        let d = [i as f64 * 0.05, 0.0, j as f64 * 0.05];
        assert!(!spot.contains(&spot.translated(d)));
    }
    assert_eq!(w.place_content(p(2)).unwrap(), PlacementOutcome::Rejected);
}

#[test]
fn version_content_is_keyed() {
    assert_eq!(version(3, 4, "x"), version(3, 4, "x"));
    assert_ne!(version(3, 4, "x").extent, version(3, 5, "x").extent);
}
