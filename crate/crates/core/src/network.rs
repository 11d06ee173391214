//! Lossy links with adaptive hybrid NACK/FEC recovery and rate adaptation.
//!
//! A payload is cut into 1 200-byte packets grouped in blocks of `k`; each block
//! carries `fec_redundancy` parity packets, and any `k` of the `k + r` packets
//! rebuild the block. Losses beyond the parity budget are repaired by NACK
//! rounds of one RTT each, unless the plan is FEC-only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sim::Time;

pub const PACKET_BYTES: u64 = 1_200;
pub const RATE_HEADROOM: f64 = 0.8;
/// Safety valve for pathological loss rates; a block still missing after this
/// many NACK rounds is reported undelivered.
pub const MAX_NACK_ROUNDS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub latency_us: u64,
    pub bandwidth_bps: u64,
    pub loss_p: f64,
    #[serde(default)]
    pub jitter_us: u64,
}

impl LinkState {
    pub fn is_valid(&self) -> bool {
        self.bandwidth_bps > 0 && (0.0..1.0).contains(&self.loss_p)
    }

    pub fn rtt_us(&self) -> u64 {
        2 * self.latency_us
    }

    /// Serialization time of `bytes`, rounded up to whole microseconds.
    pub fn serialization_us(&self, bytes: u64) -> u64 {
        let bits = u128::from(bytes) * 8 * 1_000_000;
        bits.div_ceil(u128::from(self.bandwidth_bps)) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecoveryMode {
    NackOnly,
    Hybrid,
    FecOnly,
}

impl RecoveryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RecoveryMode::NackOnly => "nack",
            RecoveryMode::Hybrid => "hybrid",
            RecoveryMode::FecOnly => "fec",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryPlan {
    pub mode: RecoveryMode,
    pub fec_redundancy: u32,
    pub k: u32,
}

impl RecoveryPlan {
    pub fn nack_only(k: u32) -> Self {
        RecoveryPlan { mode: RecoveryMode::NackOnly, fec_redundancy: 0, k }
    }

    pub fn is_consistent(&self) -> bool {
        self.k >= 1 && (self.mode != RecoveryMode::NackOnly || self.fec_redundancy == 0)
    }
}

/// Picks the recovery scheme for a block of `k` packets.
///
/// Lossless links use plain NACK. When one RTT fits in the slack, parity covers
/// the expected losses and NACK repairs the rest; otherwise parity alone must
/// cover the losses with one packet of margin.
pub fn plan_recovery(link: &LinkState, deadline_slack_us: u64, k: u32) -> RecoveryPlan {
    assert!(k >= 1, "block size must be at least one packet");
    let p = link.loss_p;
    if p == 0.0 {
        return RecoveryPlan::nack_only(k);
    }
    if link.rtt_us() <= deadline_slack_us {
        let r = (f64::from(k) * p).ceil() as u32;
        RecoveryPlan { mode: RecoveryMode::Hybrid, fec_redundancy: r, k }
    } else {
        let r = (f64::from(k) * p / (1.0 - p)).ceil() as u32 + 1;
        RecoveryPlan { mode: RecoveryMode::FecOnly, fec_redundancy: r, k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOutcome {
    Delivered(Time),
    Missed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockReport {
    pub outcome: BlockOutcome,
    /// Completion time even when late; `None` when data was lost for good.
    pub completed_at: Option<Time>,
    pub data_packets: u64,
    pub parity_packets: u64,
    pub retransmitted_packets: u64,
    /// Data packets received directly or rebuilt from parity/retransmission.
    pub recovered_packets: u64,
    pub losses: u64,
    pub nack_rounds: u32,
    pub bytes_sent: u64,
}

fn uniform_jitter(link: &LinkState, rng: &mut impl Rng) -> i64 {
    if link.jitter_us == 0 {
        0
    } else {
        let j = link.jitter_us as i64;
        rng.random_range(-j..=j)
    }
}

/// Simulates sending `payload_bytes` starting at `start`. `deadline_us` is the
/// delivery budget relative to `start`.
pub fn transmit_block(
    payload_bytes: u64,
    link: &LinkState,
    plan: &RecoveryPlan,
    start: Time,
    deadline_us: u64,
    rng: &mut impl Rng,
) -> BlockReport {
    let data_packets = payload_bytes.div_ceil(PACKET_BYTES);
    let k = u64::from(plan.k.max(1));
    let r = if plan.mode == RecoveryMode::NackOnly { 0 } else { u64::from(plan.fec_redundancy) };
    let blocks = data_packets.div_ceil(k);
    let parity_packets = blocks * r;
    let pkt_ser = link.serialization_us(PACKET_BYTES);

    let mut sent = 0u64;
    let mut losses = 0u64;
    let mut last_arrival = start + link.latency_us;
    // packets still missing per block after the first pass
    let mut missing: Vec<u64> = Vec::with_capacity(blocks as usize);
    for b in 0..blocks {
        let kb = (data_packets - b * k).min(k);
        let mut lost_here = 0;
        for _ in 0..kb + r {
            sent += 1;
            let depart = start + sent * pkt_ser;
            if rng.random_bool(link.loss_p) {
                lost_here += 1;
            } else {
                let arrival = (depart + link.latency_us) as i64 + uniform_jitter(link, rng);
                last_arrival = last_arrival.max(arrival.max(depart as i64) as u64);
            }
        }
        losses += lost_here;
        missing.push(lost_here.saturating_sub(r));
    }
    if data_packets == 0 {
        last_arrival = start + link.latency_us;
    }

    let mut t = last_arrival;
    let mut rounds = 0u32;
    let mut retransmitted = 0u64;
    let mut outstanding: u64 = missing.iter().sum();
    if plan.mode != RecoveryMode::FecOnly {
        while outstanding > 0 && rounds < MAX_NACK_ROUNDS {
            rounds += 1;
            // NACK travels back, retransmissions come forward
            let round_start = t + link.latency_us;
            let mut still = 0;
            let mut round_end = round_start;
            for i in 0..outstanding {
                retransmitted += 1;
                let depart = round_start + (i + 1) * pkt_ser;
                if rng.random_bool(link.loss_p) {
                    still += 1;
                    losses += 1;
                } else {
                    let arrival = (depart + link.latency_us) as i64 + uniform_jitter(link, rng);
                    round_end = round_end.max(arrival.max(depart as i64) as u64);
                }
            }
            if still == outstanding {
                round_end = round_start + outstanding * pkt_ser + link.latency_us;
            }
            t = round_end;
            outstanding = still;
        }
    }

    let bytes_sent = (data_packets + parity_packets + retransmitted) * PACKET_BYTES;
    let recovered_packets = data_packets - outstanding.min(data_packets);
    let completed_at = if outstanding == 0 { Some(t) } else { None };
    let outcome = match completed_at {
        Some(at) if at - start <= deadline_us => BlockOutcome::Delivered(at),
        _ => BlockOutcome::Missed,
    };
    BlockReport {
        outcome,
        completed_at,
        data_packets,
        parity_packets,
        retransmitted_packets: retransmitted,
        recovered_packets,
        losses,
        nack_rounds: rounds,
        bytes_sent,
    }
}

/// Highest ladder level within 80 % of the bandwidth, else the lowest level.
pub fn adapt_rate(link: &LinkState, ladder: &[u64]) -> u64 {
    assert!(!ladder.is_empty(), "quality ladder must not be empty");
    let cap = RATE_HEADROOM * link.bandwidth_bps as f64;
    ladder.iter().copied().filter(|b| *b as f64 <= cap).max().unwrap_or(ladder[0])
}
