//! Scenario files.
//!
//! A scenario is a TOML document. Times are plain SI seconds (`5.2e-6`),
//! rates plain hertz; there is no unit-suffix parsing.
//!
//! ```toml
//! name = "block_usefulness"
//! seed = 2011
//! n_blocks = 900           # single-detector block acquisitions
//! n_edges = 0              # main-clock edges for two-detector runs
//! analyses = ["useful_stats"]
//!
//! [source]
//! mean_photon_number = 1.0e-1
//! trigger_rate = 4.0e6
//!
//! [[detector]]             # one table per detector, at most two
//! quantum_efficiency = 1.0e-1
//! dead_time = 5.2e-6
//!
//! [feedback]
//! cable_delay = 8.0e-9
//! fpga_delay = 2.0e-9
//! # cmp_value defaults to the smallest value covering every dead time
//! ```
//!
//! See `SCENARIO.md` at the repository root for every key.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::DEFAULT_BLOCK_CAPACITY;
use crate::clock_manager::{check_feedback_constraint, min_cmp_value, total_response_time, FeedbackConfig, FeedbackVerdict};
use crate::error::{Error, Result};
use crate::photon_source::SourceConfig;
use crate::security::check_self_blinding;
use crate::spad::SpadConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    UsefulStats,
    Coincidence,
    KeyExtraction,
    SelfBlinding,
    Randomness,
}

impl Analysis {
    /// Analyses that need the two-detector runner.
    pub fn is_dual(self) -> bool {
        !matches!(self, Analysis::UsefulStats)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackSection {
    #[serde(default = "default_cable_delay")]
    cable_delay: f64,
    #[serde(default = "default_fpga_delay")]
    fpga_delay: f64,
    cmp_value: Option<u32>,
    #[serde(default = "default_true")]
    enabled: bool,
}

impl Default for FeedbackSection {
    fn default() -> Self {
        FeedbackSection {
            cable_delay: default_cable_delay(),
            fpga_delay: default_fpga_delay(),
            cmp_value: None,
            enabled: true,
        }
    }
}

fn default_cable_delay() -> f64 {
    8e-9
}

fn default_fpga_delay() -> f64 {
    2e-9
}

fn default_true() -> bool {
    true
}

fn default_block_capacity() -> usize {
    DEFAULT_BLOCK_CAPACITY
}

fn default_ec_fraction() -> f64 {
    0.05
}

fn default_key_preview() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    seed: u64,
    #[serde(default)]
    n_edges: u64,
    #[serde(default)]
    n_blocks: usize,
    #[serde(default = "default_block_capacity")]
    block_capacity: usize,
    analyses: BTreeSet<Analysis>,
    source: SourceConfig,
    #[serde(rename = "detector")]
    detectors: Vec<SpadConfig>,
    #[serde(default)]
    feedback: FeedbackSection,
    #[serde(default = "default_ec_fraction")]
    ec_reveal_fraction: f64,
    #[serde(default)]
    trace_cycles: u64,
    #[serde(default = "default_key_preview")]
    key_preview_bits: usize,
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub source: SourceConfig,
    pub detectors: Vec<SpadConfig>,
    pub feedback: FeedbackConfig,
    pub n_edges: u64,
    pub n_blocks: usize,
    pub block_capacity: usize,
    pub seed: u64,
    pub analyses: BTreeSet<Analysis>,
    /// Fraction of key positions disclosed by error correction.
    pub ec_reveal_fraction: f64,
    /// Leading main-clock cycles written to the clock-manager trace.
    pub trace_cycles: u64,
    /// Key bits drawn in the circle rendering.
    pub key_preview_bits: usize,
}

/// Non-fatal findings printed when a scenario is loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Advisory {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub advisories: Vec<Advisory>,
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, path)
}

/// Parses and validates scenario text; `origin` is used in error messages.
pub fn parse_scenario(text: &str, origin: &Path) -> Result<LoadedScenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_column(text, span.start))
            .unwrap_or((1, 1));
        Error::Parse {
            path: PathBuf::from(origin),
            line,
            column,
            message: e.message().to_owned(),
        }
    })?;
    let scenario = file.into_scenario()?;
    let advisories = scenario.advisories();
    Ok(LoadedScenario { scenario, advisories })
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario> {
        if self.name.trim().is_empty() {
            return Err(Error::validation("name", "must not be empty"));
        }
        self.source.validate()?;
        match self.detectors.len() {
            1 | 2 => {}
            n => return Err(Error::validation("detector", format!("expected 1 or 2 detectors, found {n}"))),
        }
        for (i, d) in self.detectors.iter().enumerate() {
            d.validate(&format!("detector[{i}]"))?;
        }
        if self.analyses.is_empty() {
            return Err(Error::validation("analyses", "at least one analysis is required"));
        }
        let wants_dual = self.analyses.iter().any(|a| a.is_dual());
        if wants_dual && self.detectors.len() != 2 {
            return Err(Error::validation("detector", "coincidence and key analyses need two detectors"));
        }
        if self.analyses.contains(&Analysis::UsefulStats) && self.detectors.len() != 1 {
            return Err(Error::validation("detector", "useful_stats needs exactly one detector"));
        }
        if wants_dual && self.n_edges == 0 {
            return Err(Error::validation("n_edges", "must be >= 1 for two-detector analyses"));
        }
        if self.analyses.contains(&Analysis::UsefulStats) {
            if self.n_blocks == 0 {
                return Err(Error::validation("n_blocks", "must be >= 1 for useful_stats"));
            }
            if self.block_capacity == 0 {
                return Err(Error::validation("block_capacity", "must be >= 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.ec_reveal_fraction) {
            return Err(Error::validation("ec_reveal_fraction", "must lie in [0, 1]"));
        }
        let cmp_value = self
            .feedback
            .cmp_value
            .unwrap_or_else(|| min_cmp_value(&self.detectors, self.source.trigger_rate));
        let feedback = FeedbackConfig {
            cable_delay: self.feedback.cable_delay,
            fpga_delay: self.feedback.fpga_delay,
            cmp_value,
            enabled: self.feedback.enabled,
        };
        // cmp_value is checked even when the file switches disabling off,
        // since runs execute both modes
        feedback.with_enabled(true).validate()?;
        Ok(Scenario {
            name: self.name,
            source: self.source,
            detectors: self.detectors,
            feedback,
            n_edges: self.n_edges,
            n_blocks: self.n_blocks,
            block_capacity: self.block_capacity,
            seed: self.seed,
            analyses: self.analyses,
            ec_reveal_fraction: self.ec_reveal_fraction,
            trace_cycles: self.trace_cycles,
            key_preview_bits: self.key_preview_bits,
        })
    }
}

impl Scenario {
    pub fn is_dual(&self) -> bool {
        self.detectors.len() == 2
    }

    pub fn wants(&self, analysis: Analysis) -> bool {
        self.analyses.contains(&analysis)
    }

    /// Dead time used to group key bits: spacings below the shorter dead
    /// time force the two detectors to alternate.
    pub fn key_dead_time(&self) -> f64 {
        self.detectors.iter().map(|d| d.dead_time).fold(f64::INFINITY, f64::min)
    }

    pub fn advisories(&self) -> Vec<Advisory> {
        let mut out = Vec::new();
        let rate = self.source.trigger_rate;
        let period = self.source.period();
        for (i, d) in self.detectors.iter().enumerate() {
            let tau = total_response_time(d, &self.feedback);
            if check_feedback_constraint(d, &self.source, &self.feedback) == FeedbackVerdict::ResponseTooSlow {
                out.push(Advisory {
                    code: "feedback_too_slow",
                    message: format!(
                        "detector[{i}]: loop response {tau:e} s is not below the clock period {period:e} s; \
                         futile gates will reach the detector before disabling takes hold"
                    ),
                });
            }
            if check_self_blinding(d.dead_time, rate).unwrap_or(false) {
                out.push(Advisory {
                    code: "self_blinding_risk",
                    message: format!(
                        "detector[{i}]: dead time {:e} s exceeds the clock period {period:e} s; \
                         without trigger disabling the detectors can be blind at different times",
                        d.dead_time
                    ),
                });
            }
            if rate > d.max_trigger_rate {
                out.push(Advisory {
                    code: "above_max_trigger_rate",
                    message: format!(
                        "detector[{i}]: trigger rate {rate:e} Hz exceeds its limit {:e} Hz",
                        d.max_trigger_rate
                    ),
                });
            }
            let span = d.dead_time * rate;
            if span > 0.0 && (span - span.round()).abs() < 1e-6 {
                out.push(Advisory {
                    code: "dead_time_on_clock_edge",
                    message: format!(
                        "detector[{i}]: dead time is {span} clock periods; recovery coincides with a clock edge \
                         and is sensitive to rounding"
                    ),
                });
            }
        }
        let needed = min_cmp_value(&self.detectors, rate);
        if self.feedback.cmp_value < needed {
            out.push(Advisory {
                code: "cmp_value_short",
                message: format!(
                    "cmp_value {} ends suppression before recovery ({needed} cycles needed); \
                     futile gates will pass with disabling on",
                    self.feedback.cmp_value
                ),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLOCKS: &str = r#"
name = "block_usefulness"
seed = 1
n_blocks = 900
analyses = ["useful_stats"]

[source]
mean_photon_number = 1.0e-1
trigger_rate = 4.0e6

[[detector]]
quantum_efficiency = 1.0e-1
dead_time = 5.2e-6
"#;

    fn parse(text: &str) -> Result<LoadedScenario> {
        parse_scenario(text, Path::new("test.scenario"))
    }

    #[test]
    fn defaults_fill_in() {
        let s = parse(BLOCKS).unwrap().scenario;
        assert_eq!(s.feedback.cmp_value, 20);
        assert_eq!(s.block_capacity, 8192);
        assert_eq!(s.detectors[0].response_latency, 28e-9);
        assert_eq!(s.feedback.cable_delay, 8e-9);
        assert_eq!(s.ec_reveal_fraction, 0.05);
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let err = parse("").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = "name = \"x\"\nseed = 1\nanalyses = [\"useful_stats\"]\n[source]\nmean_photon_number = oops\n";
        match parse(text).unwrap_err() {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 5);
                assert_eq!(column, 22);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let bad = BLOCKS.replace("quantum_efficiency = 1.0e-1", "quantum_efficiency = 1.5");
        let err = parse(&bad).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "detector[0].quantum_efficiency"));

        let dual = BLOCKS.replace("[\"useful_stats\"]", "[\"coincidence\"]");
        assert!(matches!(parse(&dual).unwrap_err(), Error::Validation { ref field, .. } if field == "detector"));
    }

    #[test]
    fn advisories_fire() {
        let loaded = parse(BLOCKS).unwrap();
        let codes: Vec<_> = loaded.advisories.iter().map(|a| a.code).collect();
        assert_eq!(codes, vec!["self_blinding_risk"]);

        let slow = BLOCKS.replace("dead_time = 5.2e-6", "dead_time = 5.0e-6\nresponse_latency = 3.0e-7");
        let codes: Vec<_> = parse(&slow).unwrap().advisories.iter().map(|a| a.code).collect();
        assert!(codes.contains(&"feedback_too_slow"));
        assert!(codes.contains(&"dead_time_on_clock_edge"));
    }

    #[test]
    fn line_column_counts_from_one() {
        assert_eq!(line_column("ab\ncd", 0), (1, 1));
        assert_eq!(line_column("ab\ncd", 4), (2, 2));
    }
}
