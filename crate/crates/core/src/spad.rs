//! Gated-mode single-photon avalanche diode.
//!
//! Gates are instantaneous. A click opens an insensitivity window of
//! `dead_time` seconds: any gate opening strictly before
//! `last_click + dead_time` cannot fire. The window covers both intrinsic
//! recovery and afterpulse blocking.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpadConfig {
    pub quantum_efficiency: f64,
    /// Gate width in seconds. Carried as metadata only.
    #[serde(default = "default_gate_width")]
    pub gate_width: f64,
    pub dead_time: f64,
    #[serde(default)]
    pub dark_count_prob: f64,
    /// Trap-release click probability right after an avalanche.
    #[serde(default)]
    pub afterpulse_prob0: f64,
    /// Decay constant of the trap-release probability, in seconds.
    #[serde(default = "default_afterpulse_tau")]
    pub afterpulse_tau: f64,
    /// Delay from gate to the avalanche edge on the detector output.
    #[serde(default = "default_response_latency")]
    pub response_latency: f64,
    #[serde(default = "default_max_trigger_rate")]
    pub max_trigger_rate: f64,
}

fn default_gate_width() -> f64 {
    2.5e-9
}

fn default_afterpulse_tau() -> f64 {
    1.0e-6
}

fn default_response_latency() -> f64 {
    28.0e-9
}

fn default_max_trigger_rate() -> f64 {
    8.0e6
}

impl Default for SpadConfig {
    /// id201-like detector: 10% efficiency, 2.5 ns gate, 10 us blocking.
    fn default() -> Self {
        SpadConfig {
            quantum_efficiency: 0.1,
            gate_width: default_gate_width(),
            dead_time: 10.0e-6,
            dark_count_prob: 0.0,
            afterpulse_prob0: 0.0,
            afterpulse_tau: default_afterpulse_tau(),
            response_latency: default_response_latency(),
            max_trigger_rate: default_max_trigger_rate(),
        }
    }
}

impl SpadConfig {
    /// Checks ranges; `field_prefix` names the detector in error messages.
    pub fn validate(&self, field_prefix: &str) -> Result<()> {
        let probs = [
            ("quantum_efficiency", self.quantum_efficiency),
            ("dark_count_prob", self.dark_count_prob),
            ("afterpulse_prob0", self.afterpulse_prob0),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("{field_prefix}.{name}"), "must lie in [0, 1]"));
            }
        }
        let non_negative = [
            ("dead_time", self.dead_time),
            ("response_latency", self.response_latency),
        ];
        for (name, t) in non_negative {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::validation(format!("{field_prefix}.{name}"), "must be a finite time >= 0 s"));
            }
        }
        let positive = [
            ("gate_width", self.gate_width),
            ("afterpulse_tau", self.afterpulse_tau),
            ("max_trigger_rate", self.max_trigger_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{field_prefix}.{name}"), "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Click probability of one pulse of Poisson light with mean `mu`: `1 - exp(-mu * eta)`.
pub fn detection_probability(mu: f64, eta: f64) -> Result<f64> {
    if mu.is_nan() || mu < 0.0 {
        return Err(Error::Domain(format!("mean photon number must be >= 0, got {mu}")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("quantum efficiency must lie in [0, 1], got {eta}")));
    }
    Ok(-(-mu * eta).exp_m1())
}

/// Number of clock periods after a click whose gates fall inside the dead window,
/// i.e. the count of `j >= 1` with `j / trigger_rate < dead_time`.
pub fn dead_gate_count(dead_time: f64, trigger_rate: f64) -> u32 {
    let span = dead_time * trigger_rate;
    if span <= 0.0 {
        0
    } else {
        (span.ceil() - 1.0) as u32
    }
}

/// Outcome of presenting one gate to the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOutcome {
    pub clicked: bool,
    /// True when the gate fell inside the dead window.
    pub insensitive: bool,
    /// Time the avalanche edge leaves the detector, if it clicked.
    pub avalanche_out_time: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpadState {
    dead_until: f64,
    last_avalanche_time: Option<f64>,
    last_gate_time: Option<f64>,
}

impl SpadState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dead_until(&self) -> f64 {
        self.dead_until
    }

    pub fn last_avalanche_time(&self) -> Option<f64> {
        self.last_avalanche_time
    }

    pub fn is_armed(&self, gate_time: f64) -> bool {
        gate_time >= self.dead_until
    }

    /// Presents a gate carrying `photons` photons.
    ///
    /// Gate times must be non-decreasing across calls.
    pub fn apply_gate<R: Rng + ?Sized>(
        &mut self,
        config: &SpadConfig,
        gate_time: f64,
        photons: u64,
        rng: &mut R,
    ) -> Result<GateOutcome> {
        if let Some(prev) = self.last_gate_time {
            if gate_time < prev {
                return Err(Error::Usage(format!(
                    "gate at {gate_time:e} s precedes previous gate at {prev:e} s"
                )));
            }
        }
        self.last_gate_time = Some(gate_time);

        if gate_time < self.dead_until {
            return Ok(GateOutcome {
                clicked: false,
                insensitive: true,
                avalanche_out_time: None,
            });
        }

        let p = self.click_probability(config, gate_time, photons);
        let clicked = if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            rng.random::<f64>() < p
        };

        let avalanche_out_time = if clicked {
            self.dead_until = gate_time + config.dead_time;
            self.last_avalanche_time = Some(gate_time);
            Some(gate_time + config.response_latency)
        } else {
            None
        };
        Ok(GateOutcome {
            clicked,
            insensitive: false,
            avalanche_out_time,
        })
    }

    /// Click probability for an armed gate.
    pub fn click_probability(&self, config: &SpadConfig, gate_time: f64, photons: u64) -> f64 {
        let miss_photon = if photons == 0 {
            1.0
        } else {
            (1.0 - config.quantum_efficiency).powf(photons as f64)
        };
        let miss_after = match self.last_avalanche_time {
            Some(t) if config.afterpulse_prob0 > 0.0 => {
                1.0 - config.afterpulse_prob0 * (-(gate_time - t) / config.afterpulse_tau).exp()
            }
            _ => 1.0,
        };
        1.0 - miss_photon * (1.0 - config.dark_count_prob) * miss_after
    }
}
