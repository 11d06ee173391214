//! Monte-Carlo batches over the simulator's building blocks.
//!
//! Every trial draws from its own keyed substream, so results do not depend on
//! the execution mode or thread count.

use crate::engine::{run, RunOptions, RunOutput};
use crate::ids::AppId;
use crate::network::{transmit_block, BlockReport, LinkState, RecoveryPlan};
use crate::par::{map_indexed, map_slice, ExecMode};
use crate::scenario::Scenario;
use crate::scheduler::{AppProcess, ModelMode, MotionCondition, RebindModel, RecoveryModel, Scheduler, SwitchRequest};
use crate::sim::{MetricsLedger, RngStreams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub stdev: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Summary {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        if n == 0 {
            return Summary { n, mean: f64::NAN, stdev: f64::NAN, min: f64::NAN, max: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Summary {
            n,
            mean,
            stdev: var.sqrt(),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchSetup {
    pub mode: ModelMode,
    pub condition: MotionCondition,
    pub target_in_view: bool,
    pub target_placements: usize,
    pub interframe_us: u64,
    pub recovery: RecoveryModel,
    pub rebind: RebindModel,
}

impl SwitchSetup {
    pub fn new(mode: ModelMode, condition: MotionCondition) -> Self {
        SwitchSetup {
            mode,
            condition,
            target_in_view: true,
            target_placements: 4,
            interframe_us: crate::scheduler::INTERFRAME_60FPS_US,
            recovery: RecoveryModel::default(),
            rebind: RebindModel::default(),
        }
    }
}

/// Cost of `n` independent app switches, each through a fresh two-app scheduler.
pub fn switch_costs(setup: &SwitchSetup, n: usize, seed: u64, exec: ExecMode) -> Vec<u64> {
    let streams = RngStreams::new(seed);
    map_indexed(exec, n, |i| {
        let mut s = Scheduler::new(setup.mode, setup.interframe_us, streams.trial("switch", i as u64));
        s.recovery = setup.recovery;
        s.rebind = setup.rebind;
        s.register(AppProcess::new(AppId(1), 4_000));
        s.register(AppProcess::new(AppId(2), 4_000));
        let req = SwitchRequest {
            from: AppId(1),
            to: AppId(2),
            condition: setup.condition,
            target_in_view: setup.target_in_view,
            target_placements: setup.target_placements,
        };
        let mut ledger = MetricsLedger::new();
        s.context_switch(req, 0, &mut ledger).expect("two registered apps").cost_us
    })
}

/// Sends `payload_bytes` once per trial under `plan`.
pub fn block_trials(
    payload_bytes: u64,
    link: &LinkState,
    plan: &RecoveryPlan,
    deadline_us: u64,
    n: usize,
    seed: u64,
    exec: ExecMode,
) -> Vec<BlockReport> {
    let streams = RngStreams::new(seed);
    map_indexed(exec, n, |i| {
        let mut rng = streams.trial("block", i as u64);
        transmit_block(payload_bytes, link, plan, 0, deadline_us, &mut rng)
    })
}

/// Two plans driven by the same random stream in each trial.
pub fn paired_block_trials(
    payload_bytes: u64,
    link: &LinkState,
    plans: (&RecoveryPlan, &RecoveryPlan),
    deadline_us: u64,
    n: usize,
    seed: u64,
    exec: ExecMode,
) -> Vec<(BlockReport, BlockReport)> {
    let streams = RngStreams::new(seed);
    map_indexed(exec, n, |i| {
        let a = transmit_block(payload_bytes, link, plans.0, 0, deadline_us, &mut streams.trial("pair", i as u64));
        let b = transmit_block(payload_bytes, link, plans.1, 0, deadline_us, &mut streams.trial("pair", i as u64));
        (a, b)
    })
}

/// One full run per seed.
pub fn run_seeds(scenario: &Scenario, seeds: &[u64], exec: ExecMode) -> Vec<RunOutput> {
    map_slice(exec, seeds, |seed| {
        let s = Scenario { seed: *seed, ..scenario.clone() };
        run(&s, &[], RunOptions::default())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{BlockOutcome, RecoveryMode};

    #[test]
    fn summary_basics() {
        let s = Summary::of([1.0, 2.0, 3.0]);
        assert_eq!((s.n, s.mean, s.min, s.max), (3, 2.0, 1.0, 3.0));
        assert!((s.stdev - 1.0).abs() < 1e-12);
        assert!(Summary::of([]).mean.is_nan());
    }

    #[test]
    fn modes_agree() {
        let setup = SwitchSetup::new(ModelMode::IsolatedModel, MotionCondition::Static);
        assert_eq!(
            switch_costs(&setup, 64, 5, ExecMode::Sequential),
            switch_costs(&setup, 64, 5, ExecMode::Parallel)
        );
        let link = LinkState { latency_us: 5_000, bandwidth_bps: 20_000_000, loss_p: 0.2, jitter_us: 500 };
        let plan = RecoveryPlan { mode: RecoveryMode::Hybrid, fec_redundancy: 2, k: 10 };
        assert_eq!(
            block_trials(24_000, &link, &plan, 50_000, 50, 1, ExecMode::Sequential),
            block_trials(24_000, &link, &plan, 50_000, 50, 1, ExecMode::Parallel)
        );
    }

    #[test]
    fn shared_switches_are_constant() {
        let setup = SwitchSetup::new(ModelMode::SharedModel, MotionCondition::Moving);
        let c = switch_costs(&setup, 10, 1, ExecMode::Sequential);
        assert!(c.iter().all(|x| *x == 4_000));
    }

    #[test]
    fn paired_lossless_plans_match() {
        let link = LinkState { latency_us: 1_000, bandwidth_bps: 10_000_000, loss_p: 0.0, jitter_us: 0 };
        let p = RecoveryPlan::nack_only(10);
        for (a, b) in paired_block_trials(5_000, &link, (&p, &p), 100_000, 10, 3, ExecMode::Sequential) {
            assert_eq!(a, b);
            assert!(matches!(a.outcome, BlockOutcome::Delivered(_)));
        }
    }
}
