mod common;

use proptest::prelude::*;
use rand::Rng;
use xros_core::engine::{run, RunOptions};
use xros_core::sim::{EnergyKind, EventHandler, MetricsLedger, Payload, SimError, SimEvent, Simulator, Time};

/// Fans out a random number of follow-ups per event and checks the ledger
/// never shrinks between two events.
struct Fanout {
    horizon: Time,
    last: MetricsLedger,
    regressions: u32,
}

impl EventHandler for Fanout {
    type Error = SimError;

    fn handle(&mut self, sim: &mut Simulator, ev: SimEvent) -> Result<(), SimError> {
        let mut rng = sim.rng.trial("fanout", ev.seq);
        sim.ledger.incr("events", 1);
        sim.ledger.charge_energy("m", EnergyKind::Compute, rng.random_range(0.0..2.0))?;
        if rng.random_bool(0.3) {
            sim.ledger.charge_energy("radio", EnergyKind::Radio, 0.25)?;
        }
        for _ in 0..rng.random_range(0..3) {
            let at = ev.time + rng.random_range(0..500);
            if at < self.horizon {
                sim.schedule(at, Payload::SyncTick { round: ev.seq })?;
            }
        }
        if !sim.ledger.dominates(&self.last) {
            self.regressions += 1;
        }
        self.last = sim.ledger.clone();
        Ok(())
    }
}

fn seeded(seed: u64, starts: &[Time], horizon: Time) -> (Simulator, Fanout) {
    let mut sim = Simulator::new(seed).with_trace();
    for (i, t) in starts.iter().enumerate() {
        sim.schedule(*t, Payload::SyncTick { round: i as u64 }).unwrap();
    }
    (sim, Fanout { horizon, last: MetricsLedger::new(), regressions: 0 })
}

proptest! {
    #[test]
    fn trace_is_totally_ordered_and_conserved(seed in any::<u64>(), starts in prop::collection::vec(0u64..2_000, 1..40), stop in 0u64..4_000) {
        let (mut sim, mut h) = seeded(seed, &starts, 5_000);
        sim.run_until(stop, &mut h).unwrap();
        let tr = sim.trace();
        prop_assert!(tr.windows(2).all(|w| (w[0].time, w[0].seq) < (w[1].time, w[1].seq)));
        prop_assert!(tr.iter().all(|e| e.time <= stop));
        prop_assert_eq!(sim.enqueued(), sim.processed() + sim.pending() as u64);
        prop_assert_eq!(sim.now(), stop);
        prop_assert_eq!(h.regressions, 0);
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), starts in prop::collection::vec(0u64..1_000, 1..20)) {
        let (mut a, mut ha) = seeded(seed, &starts, 3_000);
        let (mut b, mut hb) = seeded(seed, &starts, 3_000);
        a.run_until(3_000, &mut ha).unwrap();
        b.run_until(3_000, &mut hb).unwrap();
        prop_assert_eq!(a.trace(), b.trace());
        prop_assert_eq!(a.ledger.to_flat_document(), b.ledger.to_flat_document());
    }

    #[test]
    fn longer_runs_dominate(seed in any::<u64>(), starts in prop::collection::vec(0u64..1_000, 1..20), d1 in 0u64..2_000, extra in 0u64..2_000) {
        let (mut a, mut ha) = seeded(seed, &starts, 5_000);
        let (mut b, mut hb) = seeded(seed, &starts, 5_000);
        let short = a.run_until(d1, &mut ha).unwrap().clone();
        let long = b.run_until(d1 + extra, &mut hb).unwrap();
        prop_assert!(long.dominates(&short));
        prop_assert!(long.communication_energy_nj() >= short.communication_energy_nj());
    }
}

#[test]
fn extra_messages_cost_exactly_n_times_c() {
    let mut a = MetricsLedger::new();
    let mut b = MetricsLedger::new();
    for _ in 0..10 {
        a.charge_energy("display", EnergyKind::Message, 0.01).unwrap();
        b.charge_energy("display", EnergyKind::Message, 0.01).unwrap();
    }
    for _ in 0..37 {
        b.charge_energy("display", EnergyKind::Message, 0.01).unwrap();
    }
    // 0.01 mJ = 10 000 nJ
    assert_eq!(b.total_energy_nj() - a.total_energy_nj(), 37 * 10_000);
    assert_eq!(b.communication_energy_nj() - a.communication_energy_nj(), 37 * 10_000);
}

#[test]
fn engine_trace_is_ordered_and_nothing_is_lost() {
    for name in common::all_scenarios() {
        let sc = common::scenario(&name, &["duration_us=3000000"]);
        let out = run(&sc, &[], RunOptions { keep_trace: true, ..RunOptions::default() });
        assert!(out.ok(), "{name}: {:?}", out.violation);
        assert!(out.trace.windows(2).all(|w| (w[0].time, w[0].seq) < (w[1].time, w[1].seq)), "{name}");
        assert_eq!(out.events_enqueued, out.events_processed + out.events_pending as u64, "{name}");
        assert_eq!(out.trace.len() as u64, out.events_processed);
    }
}

#[test]
fn offloading_switches_radio_on() {
    let on = run(&common::scenario("offload-handover.scn", &["duration_us=5000000"]), &[], RunOptions::default());
    let off = run(
        &common::scenario("offload-handover.scn", &["duration_us=5000000", "offloading.enabled=false"]),
        &[],
        RunOptions::default(),
    );
    assert!(on.ok() && off.ok());
    assert!(on.ledger.energy_nj("network") > 0);
    assert_eq!(off.ledger.energy_nj("network"), 0);
}
