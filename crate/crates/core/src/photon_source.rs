//! Pulsed, attenuated light source.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Mean photon number per pulse.
    pub mean_photon_number: f64,
    /// Pulse (and main clock) rate in Hz.
    pub trigger_rate: f64,
    /// Peak fractional deviation of the mean photon number.
    #[serde(default)]
    pub drift_amplitude: f64,
    /// Period of the sinusoidal intensity drift in seconds.
    #[serde(default = "default_drift_period")]
    pub drift_period: f64,
    /// Fraction of the light routed to detector D0.
    #[serde(default = "default_splitter_ratio")]
    pub splitter_ratio: f64,
}

fn default_drift_period() -> f64 {
    3600.0
}

fn default_splitter_ratio() -> f64 {
    0.5
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            mean_photon_number: 0.1,
            trigger_rate: 4.0e6,
            drift_amplitude: 0.0,
            drift_period: default_drift_period(),
            splitter_ratio: default_splitter_ratio(),
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_photon_number >= 0.0 && self.mean_photon_number.is_finite()) {
            return Err(Error::validation("source.mean_photon_number", "must be a finite value >= 0"));
        }
        if !(self.trigger_rate > 0.0 && self.trigger_rate.is_finite()) {
            return Err(Error::validation("source.trigger_rate", "must be > 0 Hz"));
        }
        if !(0.0..1.0).contains(&self.drift_amplitude) {
            return Err(Error::validation("source.drift_amplitude", "must lie in [0, 1)"));
        }
        if self.drift_period.is_nan() || self.drift_period <= 0.0 {
            return Err(Error::validation("source.drift_period", "must be > 0 s"));
        }
        if !(0.0..=1.0).contains(&self.splitter_ratio) {
            return Err(Error::validation("source.splitter_ratio", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Clock period in seconds.
    pub fn period(&self) -> f64 {
        1.0 / self.trigger_rate
    }

    /// Mean photon number of the pulse emitted at `pulse_index`, drift included.
    pub fn effective_mean(&self, pulse_index: u64) -> f64 {
        if self.drift_amplitude == 0.0 {
            return self.mean_photon_number;
        }
        let phase = std::f64::consts::TAU * pulse_index as f64 / (self.drift_period * self.trigger_rate);
        self.mean_photon_number * (1.0 + self.drift_amplitude * phase.sin())
    }
}

fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // mean > 0 and finite, so construction cannot fail
    let dist = Poisson::new(mean).expect("positive finite Poisson mean");
    dist.sample(rng) as u64
}

/// Photon number of one pulse: a Poisson draw around the (possibly drifting) mean.
pub fn sample_photon_number<R: Rng + ?Sized>(config: &SourceConfig, pulse_index: u64, rng: &mut R) -> u64 {
    poisson_draw(config.effective_mean(pulse_index), rng)
}

/// Beam splitter: each photon independently goes to D0 with probability `splitter_ratio`.
pub fn split_photons<R: Rng + ?Sized>(n: u64, splitter_ratio: f64, rng: &mut R) -> (u64, u64) {
    if n == 0 {
        return (0, 0);
    }
    if splitter_ratio >= 1.0 {
        return (n, 0);
    }
    if splitter_ratio <= 0.0 {
        return (0, n);
    }
    let n0 = Binomial::new(n, splitter_ratio)
        .expect("ratio checked to lie in (0, 1)")
        .sample(rng);
    (n0, n - n0)
}

/// Pulse generator with the Poisson law cached while the mean stays constant.
#[derive(Debug, Clone)]
pub struct PhotonTrain {
    config: SourceConfig,
    fixed: Option<Poisson<f64>>,
}

impl PhotonTrain {
    pub fn new(config: SourceConfig) -> Self {
        let fixed = if config.drift_amplitude == 0.0 && config.mean_photon_number > 0.0 {
            Poisson::new(config.mean_photon_number).ok()
        } else {
            None
        };
        PhotonTrain { config, fixed }
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    pub fn sample<R: Rng + ?Sized>(&self, pulse_index: u64, rng: &mut R) -> u64 {
        match &self.fixed {
            Some(dist) => dist.sample(rng) as u64,
            None => sample_photon_number(&self.config, pulse_index, rng),
        }
    }
}
