//! Trigger-disabling clock manager.
//!
//! The main clock passes through a gated clock buffer to the detector
//! trigger and to the memory clock. An avalanche edge sets a D flip-flop
//! whose output disables the buffer and enables a counter. When the counter
//! reaches `cmp_value` main-clock cycles an asynchronous reset clears the
//! flip-flop and the counter, so the following edge is delivered again.
//!
//! The model advances on main-clock edges only. An avalanche edge leaving the
//! detector at `t` reaches the flip-flop at `t + cable_delay + fpga_delay`
//! and takes effect on the first clock edge at or after that instant.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photon_source::SourceConfig;
use crate::spad::{dead_gate_count, SpadConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    pub cable_delay: f64,
    pub fpga_delay: f64,
    /// Main-clock cycles the output stays disabled after an avalanche.
    pub cmp_value: u32,
    pub enabled: bool,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            cable_delay: 8e-9,
            fpga_delay: 2e-9,
            cmp_value: 40,
            enabled: true,
        }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cable_delay >= 0.0 && self.cable_delay.is_finite()) {
            return Err(Error::validation("feedback.cable_delay", "must be a finite time >= 0 s"));
        }
        if !(self.fpga_delay >= 0.0 && self.fpga_delay.is_finite()) {
            return Err(Error::validation("feedback.fpga_delay", "must be a finite time >= 0 s"));
        }
        if self.enabled && self.cmp_value == 0 {
            return Err(Error::validation("feedback.cmp_value", "must be >= 1 when trigger disabling is enabled"));
        }
        Ok(())
    }

    /// Copy of this configuration with disabling switched on or off.
    pub fn with_enabled(&self, enabled: bool) -> Self {
        FeedbackConfig {
            enabled,
            ..self.clone()
        }
    }

    fn loop_delay(&self) -> f64 {
        self.cable_delay + self.fpga_delay
    }
}

/// Avalanche-to-buffer latency of the feedback loop.
pub fn total_response_time(spad: &SpadConfig, fb: &FeedbackConfig) -> f64 {
    spad.response_latency + fb.cable_delay + fb.fpga_delay
}

/// Highest trigger rate the loop can disable cleanly.
pub fn max_disabling_rate(tau_resp: f64) -> Result<f64> {
    if tau_resp.is_nan() || tau_resp <= 0.0 {
        return Err(Error::Domain(format!("response time must be > 0 s, got {tau_resp}")));
    }
    Ok(1.0 / tau_resp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackVerdict {
    Ok,
    /// The loop response is not shorter than one clock period; futile gates will slip through.
    ResponseTooSlow,
}

pub fn check_feedback_constraint(spad: &SpadConfig, src: &SourceConfig, fb: &FeedbackConfig) -> FeedbackVerdict {
    if total_response_time(spad, fb) < 1.0 / src.trigger_rate {
        FeedbackVerdict::Ok
    } else {
        FeedbackVerdict::ResponseTooSlow
    }
}

/// Smallest `cmp_value` for which every detector has recovered at the first
/// delivered edge after a click. A dead time landing on a clock edge (within
/// rounding) counts that edge as dead.
pub fn min_cmp_value<'a>(spads: impl IntoIterator<Item = &'a SpadConfig>, trigger_rate: f64) -> u32 {
    spads
        .into_iter()
        .map(|s| dead_gate_count(s.dead_time * (1.0 + 1e-9), trigger_rate))
        .max()
        .unwrap_or(0)
        .max(1)
}

/// Merges two time-sorted avalanche edge lists as an OR gate would:
/// simultaneous edges become one.
pub fn combine_avalanches_or(d0: &[f64], d1: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(d0.len() + d1.len());
    let (mut i, mut j) = (0, 0);
    while i < d0.len() || j < d1.len() {
        let next = match (d0.get(i), d1.get(j)) {
            (Some(&a), Some(&b)) if a <= b => {
                i += 1;
                if a == b {
                    j += 1;
                }
                a
            }
            (Some(_), Some(&b)) => {
                j += 1;
                b
            }
            (Some(&a), None) => {
                i += 1;
                a
            }
            (None, Some(&b)) => {
                j += 1;
                b
            }
            (None, None) => unreachable!(),
        };
        if out.last() != Some(&next) {
            out.push(next);
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClockManagerState {
    /// Flip-flop output: clock disabled, counter enabled.
    pub ffd_set: bool,
    pub counter: u32,
    /// Avalanche edges emitted by the detectors but not yet consumed, sorted.
    pub pending_avalanche_times: VecDeque<f64>,
}

/// One row of the optional per-cycle trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub cycle_index: u64,
    pub edge_time: f64,
    pub ffd_set: bool,
    pub counter: u32,
    pub clock_delivered: bool,
}

#[derive(Debug, Clone)]
pub struct ClockManager {
    config: FeedbackConfig,
    state: ClockManagerState,
}

impl ClockManager {
    pub fn new(config: FeedbackConfig) -> Self {
        ClockManager {
            config,
            state: ClockManagerState::default(),
        }
    }

    pub fn config(&self) -> &FeedbackConfig {
        &self.config
    }

    pub fn state(&self) -> &ClockManagerState {
        &self.state
    }

    /// Processes one main-clock edge given the avalanche edges that have
    /// reached the flip-flop since the previous edge. Returns whether the edge
    /// is passed on to the detectors and memory.
    pub fn tick(&mut self, _clock_edge_time: f64, arrived_avalanches: &[f64]) -> bool {
        if !self.config.enabled {
            return true;
        }
        if !arrived_avalanches.is_empty() {
            self.state.ffd_set = true;
        }
        if !self.state.ffd_set {
            return true;
        }
        self.state.counter += 1;
        if self.state.counter >= self.config.cmp_value {
            self.state.ffd_set = false;
            self.state.counter = 0;
        }
        false
    }

    /// Queues an avalanche edge leaving a detector at `time`.
    pub fn push_avalanche(&mut self, time: f64) {
        if !self.config.enabled {
            return;
        }
        let pending = &mut self.state.pending_avalanche_times;
        let pos = pending.partition_point(|&t| t < time);
        if pending.get(pos) != Some(&time) {
            pending.insert(pos, time);
        }
    }

    /// Collects the queued avalanches that have reached the flip-flop by
    /// `clock_edge_time` and ticks the machine.
    pub fn advance(&mut self, clock_edge_time: f64) -> bool {
        let delay = self.config.loop_delay();
        let pending = &mut self.state.pending_avalanche_times;
        let n_arrived = pending.partition_point(|&t| clock_edge_time >= t + delay);
        if n_arrived == 0 {
            return self.tick(clock_edge_time, &[]);
        }
        let arrived: Vec<f64> = pending.drain(..n_arrived).collect();
        self.tick(clock_edge_time, &arrived)
    }

    pub fn trace_row(&self, cycle_index: u64, edge_time: f64, clock_delivered: bool) -> TraceRow {
        TraceRow {
            cycle_index,
            edge_time,
            ffd_set: self.state.ffd_set,
            counter: self.state.counter,
            clock_delivered,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PERIOD: f64 = 250e-9;

    fn fb(cmp: u32, enabled: bool) -> FeedbackConfig {
        FeedbackConfig {
            cmp_value: cmp,
            enabled,
            ..FeedbackConfig::default()
        }
    }

    #[test]
    fn response_budget() {
        let spad = SpadConfig::default();
        let tau = total_response_time(&spad, &FeedbackConfig::default());
        assert!((tau - 38e-9).abs() < 1e-18);
        let zero = SpadConfig { response_latency: 0.0, ..SpadConfig::default() };
        let fast = FeedbackConfig { cable_delay: 0.0, fpga_delay: 0.0, ..FeedbackConfig::default() };
        assert_eq!(total_response_time(&zero, &fast), 0.0);
        let short_cable = FeedbackConfig { cable_delay: 4e-9, ..FeedbackConfig::default() };
        assert!((total_response_time(&spad, &short_cable) - 34e-9).abs() < 1e-18);
    }

    #[test]
    fn disabling_rate() {
        assert!((max_disabling_rate(38e-9).unwrap() / 1e6 - 26.3157).abs() < 1e-3);
        assert_eq!(max_disabling_rate(1.0).unwrap(), 1.0);
        assert!((max_disabling_rate(100e-9).unwrap() - 10e6).abs() < 1e-6);
        assert!(max_disabling_rate(0.0).is_err());
        assert!(max_disabling_rate(-1.0).is_err());
    }

    #[test]
    fn constraint_is_strict() {
        let spad = SpadConfig::default();
        let f = FeedbackConfig::default();
        let at = |rate: f64| SourceConfig { trigger_rate: rate, ..SourceConfig::default() };
        assert_eq!(check_feedback_constraint(&spad, &at(4e6), &f), FeedbackVerdict::Ok);
        let limit = 1.0 / total_response_time(&spad, &f);
        assert_eq!(check_feedback_constraint(&spad, &at(limit), &f), FeedbackVerdict::ResponseTooSlow);
        let slow = SpadConfig { response_latency: 290e-9, ..SpadConfig::default() };
        assert_eq!(check_feedback_constraint(&slow, &at(4e6), &f), FeedbackVerdict::ResponseTooSlow);
    }

    #[test]
    fn or_combination() {
        assert!(combine_avalanches_or(&[], &[]).is_empty());
        assert_eq!(combine_avalanches_or(&[1.0], &[]), vec![1.0]);
        assert_eq!(combine_avalanches_or(&[1.0], &[1.0]), vec![1.0]);
        assert_eq!(combine_avalanches_or(&[1.0, 3.0], &[2.0, 3.0, 4.0]), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn min_cmp_value_covers_slowest_detector() {
        let a = SpadConfig { dead_time: 5.2e-6, ..SpadConfig::default() };
        let b = SpadConfig { dead_time: 10.1e-6, ..SpadConfig::default() };
        assert_eq!(min_cmp_value([&a, &b], 4e6), 40);
        let instant = SpadConfig { dead_time: 0.0, ..SpadConfig::default() };
        assert_eq!(min_cmp_value([&instant], 4e6), 1);
        // exactly 40 periods
        assert_eq!(min_cmp_value([&SpadConfig::default()], 4e6), 40);
    }

    #[test]
    fn disabled_mode_is_transparent() {
        let mut cm = ClockManager::new(fb(5, false));
        for i in 0..100u64 {
            let t = i as f64 * PERIOD;
            cm.push_avalanche(t);
            assert!(cm.advance(t));
            assert!(cm.tick(t, &[t]));
        }
        assert!(cm.state().pending_avalanche_times.is_empty());
    }

    /// Hand walk-through: click at edge k, loop faster than one period.
    #[test]
    fn suppresses_exactly_cmp_edges() {
        for m in 1..=64u32 {
            let mut cm = ClockManager::new(fb(m, true));
            let k = 3u64;
            let mut delivered = Vec::new();
            for i in 0..(k + m as u64 + 5) {
                let t = i as f64 * PERIOD;
                let d = cm.advance(t);
                delivered.push(d);
                if i == k {
                    assert!(d);
                    cm.push_avalanche(t + 28e-9);
                }
            }
            for (i, &d) in delivered.iter().enumerate() {
                let i = i as u64;
                let expected = !(k + 1..=k + m as u64).contains(&i);
                assert_eq!(d, expected, "m={m} edge {i}");
            }
        }
    }

    #[test]
    fn slow_loop_leaks_futile_edges() {
        // response of 2.5 periods: edges k+1, k+2 still delivered
        let slow = FeedbackConfig {
            cable_delay: 2.5 * PERIOD - 28e-9 - 2e-9,
            ..fb(4, true)
        };
        let mut cm = ClockManager::new(slow);
        let mut delivered = Vec::new();
        for i in 0..12u64 {
            let t = i as f64 * PERIOD;
            delivered.push(cm.advance(t));
            if i == 0 {
                cm.push_avalanche(t + 28e-9);
            }
        }
        let expected = [true, true, true, false, false, false, false, true, true, true, true, true];
        assert_eq!(delivered, expected);
    }

    proptest! {
        #[test]
        fn never_delivers_while_disabled(
            cmp in 1u32..64,
            clicks in proptest::collection::vec(any::<bool>(), 1..400),
        ) {
            let mut cm = ClockManager::new(fb(cmp, true));
            for (i, click) in clicks.into_iter().enumerate() {
                let t = i as f64 * PERIOD;
                let delay = cm.config().loop_delay();
                let will_arrive = cm.state().pending_avalanche_times.front().is_some_and(|&a| t >= a + delay);
                let disabled_before = cm.state().ffd_set || will_arrive;
                let d = cm.advance(t);
                prop_assert!(!(d && disabled_before));
                prop_assert!(cm.state().counter <= cmp);
                prop_assert!(cm.state().counter == 0 || cm.state().ffd_set);
                if d && click {
                    cm.push_avalanche(t + 28e-9);
                }
            }
        }
    }
}
