use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{SimError, Time};

pub const FRAMES_RENDERED: &str = "frames_rendered";
pub const DEADLINE_MISSES: &str = "deadline_misses";
pub const TRACKING_RECOVERY_EVENTS: &str = "tracking_recovery_events";
pub const TRACKING_RECOVERY_TOTAL: &str = "tracking_recovery_total";
pub const MOTION_TO_PHOTON_TOTAL: &str = "motion_to_photon_total";

/// Energy is kept in integer nanojoules so sums are exact and order-independent.
const NJ_PER_MJ: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EnergyKind {
    Compute,
    Radio,
    Message,
}

/// Run-wide metrics: monotone counters, duration accumulators, per-module energy
/// and time series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLedger {
    counters: BTreeMap<String, u64>,
    timers: BTreeMap<String, u64>,
    energy_nj: BTreeMap<String, u64>,
    communication_nj: u64,
    series: BTreeMap<String, Vec<(Time, f64)>>,
    gauges: BTreeMap<String, f64>,
}

impl MetricsLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn incr(&mut self, name: &str, by: u64) {
        *self.counters.entry(name.to_string()).or_insert(0) += by;
    }

    pub fn counter(&self, name: &str) -> u64 {
        self.counters.get(name).copied().unwrap_or(0)
    }

    pub fn add_time(&mut self, name: &str, us: u64) {
        *self.timers.entry(name.to_string()).or_insert(0) += us;
    }

    pub fn timer(&self, name: &str) -> u64 {
        self.timers.get(name).copied().unwrap_or(0)
    }

    pub fn charge_energy(&mut self, module: &str, kind: EnergyKind, amount_mj: f64) -> Result<(), SimError> {
        if !(amount_mj >= 0.0) || !amount_mj.is_finite() {
            return Err(SimError::NegativeEnergy { module: module.to_string(), amount_mj });
        }
        let nj = (amount_mj * NJ_PER_MJ).round() as u64;
        *self.energy_nj.entry(module.to_string()).or_insert(0) += nj;
        if matches!(kind, EnergyKind::Radio | EnergyKind::Message) {
            self.communication_nj += nj;
        }
        Ok(())
    }

    pub fn energy_mj(&self, module: &str) -> f64 {
        self.energy_nj.get(module).copied().unwrap_or(0) as f64 / NJ_PER_MJ
    }

    pub fn energy_nj(&self, module: &str) -> u64 {
        self.energy_nj.get(module).copied().unwrap_or(0)
    }

    pub fn total_energy_nj(&self) -> u64 {
        self.energy_nj.values().sum()
    }

    pub fn total_energy_mj(&self) -> f64 {
        self.total_energy_nj() as f64 / NJ_PER_MJ
    }

    pub fn communication_energy_nj(&self) -> u64 {
        self.communication_nj
    }

    pub fn communication_energy_mj(&self) -> f64 {
        self.communication_nj as f64 / NJ_PER_MJ
    }

    /// Appends to a series. Out-of-order timestamps are rejected.
    pub fn sample(&mut self, name: &str, t: Time, value: f64) -> Result<(), SimError> {
        let s = self.series.entry(name.to_string()).or_default();
        if let Some((last, _)) = s.last() {
            if t < *last {
                return Err(SimError::SeriesOrder { series: name.to_string(), at: t, last: *last });
            }
        }
        s.push((t, value));
        Ok(())
    }

    pub fn series(&self, name: &str) -> &[(Time, f64)] {
        self.series.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn series_names(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    /// End-of-run summary values (means, ratios). Not subject to monotonicity.
    pub fn set_gauge(&mut self, name: &str, value: f64) {
        self.gauges.insert(name.to_string(), value);
    }

    pub fn gauge(&self, name: &str) -> Option<f64> {
        self.gauges.get(name).copied()
    }

    pub fn counters(&self) -> &BTreeMap<String, u64> {
        &self.counters
    }

    /// True when every counter, timer and energy entry of `self` is ≥ the same
    /// entry in `earlier`.
    pub fn dominates(&self, earlier: &MetricsLedger) -> bool {
        earlier.counters.iter().all(|(k, v)| self.counter(k) >= *v)
            && earlier.timers.iter().all(|(k, v)| self.timer(k) >= *v)
            && earlier.energy_nj.iter().all(|(k, v)| self.energy_nj(k) >= *v)
            && self.communication_nj >= earlier.communication_nj
    }

    /// Flat `key = value` document, keys sorted, one entry per line.
    pub fn to_flat_document(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.counters {
            let _ = writeln!(out, "counter.{k} = {v}");
        }
        for (k, v) in &self.timers {
            let _ = writeln!(out, "timer.{k}_us = {v}");
        }
        for (k, v) in &self.energy_nj {
            let _ = writeln!(out, "energy.{k}_mj = {:.6}", *v as f64 / NJ_PER_MJ);
        }
        let _ = writeln!(out, "energy.communication_mj = {:.6}", self.communication_energy_mj());
        let _ = writeln!(out, "energy.total_mj = {:.6}", self.total_energy_mj());
        for (k, v) in &self.gauges {
            let _ = writeln!(out, "gauge.{k} = {v:.6}");
        }
        for (k, s) in &self.series {
            let _ = writeln!(out, "series.{k}.count = {}", s.len());
            if !s.is_empty() {
                let mean = s.iter().map(|(_, v)| v).sum::<f64>() / s.len() as f64;
                let max = s.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
                let _ = writeln!(out, "series.{k}.mean = {mean:.6}");
                let _ = writeln!(out, "series.{k}.max = {max:.6}");
            }
        }
        out
    }

    /// CSV with header `time_us,value`.
    pub fn series_csv(&self, name: &str) -> String {
        let mut out = String::from("time_us,value\n");
        for (t, v) in self.series(name) {
            let _ = writeln!(out, "{t},{v:.6}");
        }
        out
    }
}
