//! Scenario execution behind the `tdsim` binary.
//!
//! A run executes the scenario with trigger disabling ON and OFF (or just one
//! of them) and writes, per mode `m`:
//!
//! * `events_m.csv`: every delivered gate with a click (`gate_index,time_s,d0,d1`)
//! * `stats_m.json`: headline counters
//! * `self_blinding_m.json`: key analysis (two-detector scenarios)
//! * `key_m.txt`: circle rendering of the first key bits (two-detector scenarios)
//! * `trace_m.csv`: clock-manager trace when `trace_cycles > 0`
//!
//! plus `useful_pct_per_block.csv` for single-detector scenarios and
//! `summary.json`.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::acquisition::{run_dual, run_single, simulate_expected_useful, BlockPlan, DualRun, RunStats, SeedPlan, SingleRun};
use crate::clock_manager::{check_feedback_constraint, min_cmp_value, FeedbackVerdict};
use crate::error::{Error, Result};
use crate::output::{self, SweepRow};
use crate::scenario::{Advisory, Analysis, Scenario};
use crate::security::{self, randomness, AnalysisConfig, SelfBlindingReport, SiftedKey};
use crate::spad::dead_gate_count;

/// Trials behind the theory line of the block series.
pub const THEORY_TRIALS: u32 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    On,
    Off,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::On => "on",
            Mode::Off => "off",
        }
    }

    fn enabled(self) -> bool {
        self == Mode::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModeSelection {
    On,
    Off,
    #[default]
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> &'static [Mode] {
        match self {
            ModeSelection::On => &[Mode::On],
            ModeSelection::Off => &[Mode::Off],
            ModeSelection::Both => &[Mode::On, Mode::Off],
        }
    }
}

impl FromStr for ModeSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(ModeSelection::On),
            "off" => Ok(ModeSelection::Off),
            "both" => Ok(ModeSelection::Both),
            other => Err(Error::Usage(format!("mode must be on, off or both, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub modes: ModeSelection,
    /// Draw the OFF run from its own seed instead of pairing it with ON.
    pub independent_seeds: bool,
}

impl RunOptions {
    fn seeds(&self, seed: u64, mode: Mode) -> SeedPlan {
        if self.independent_seeds && mode == Mode::Off {
            SeedPlan::single(seed.wrapping_add(1))
        } else {
            SeedPlan::single(seed)
        }
    }
}

/// Contents of `stats_<mode>.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub scenario: String,
    pub mode: Mode,
    pub feedback_verdict: FeedbackVerdict,
    pub total_edges: u64,
    pub delivered_gates: u64,
    pub positive_detections: u64,
    pub useful_percentage: f64,
    pub n_events: Option<u64>,
    pub n_coincidences: Option<u64>,
    pub coincidence_fraction: Option<f64>,
    pub coincidence_per_gate: Option<f64>,
    pub double_click_count: Option<u64>,
    pub key_length: Option<u64>,
    pub blocks: Option<RunStats>,
}

fn verdict(s: &Scenario) -> FeedbackVerdict {
    let slow = s
        .detectors
        .iter()
        .any(|d| check_feedback_constraint(d, &s.source, &s.feedback) == FeedbackVerdict::ResponseTooSlow);
    if slow {
        FeedbackVerdict::ResponseTooSlow
    } else {
        FeedbackVerdict::Ok
    }
}

fn single_stats(s: &Scenario, mode: Mode, run: &SingleRun) -> StatsReport {
    StatsReport {
        scenario: s.name.clone(),
        mode,
        feedback_verdict: verdict(s),
        total_edges: run.stats.total_edges,
        delivered_gates: run.stats.records,
        positive_detections: run.stats.positive_detections,
        useful_percentage: run.stats.useful_percentage,
        n_events: None,
        n_coincidences: None,
        coincidence_fraction: None,
        coincidence_per_gate: None,
        double_click_count: None,
        key_length: None,
        blocks: Some(run.stats.clone()),
    }
}

fn dual_stats(s: &Scenario, mode: Mode, run: &DualRun) -> StatsReport {
    let c = &run.coincidence;
    let useful = if c.delivered_gates == 0 {
        100.0
    } else {
        100.0 * (c.delivered_gates - run.futile_gates) as f64 / c.delivered_gates as f64
    };
    StatsReport {
        scenario: s.name.clone(),
        mode,
        feedback_verdict: verdict(s),
        total_edges: c.n_edges,
        delivered_gates: c.delivered_gates,
        positive_detections: run.clicks[0] + run.clicks[1],
        useful_percentage: useful,
        n_events: Some(c.n_events),
        n_coincidences: Some(c.n_coincidences),
        coincidence_fraction: Some(c.coincidence_fraction),
        coincidence_per_gate: Some(c.coincidence_per_gate),
        double_click_count: Some(c.double_click_count()),
        key_length: Some(run.key.len() as u64),
        blocks: None,
    }
}

fn single(s: &Scenario, mode: Mode, seeds: SeedPlan) -> Result<SingleRun> {
    let plan = BlockPlan {
        n_blocks: s.n_blocks,
        block_capacity: s.block_capacity,
        keep_records: false,
        trace_cycles: s.trace_cycles,
    };
    run_single(&s.source, &s.detectors[0], &s.feedback.with_enabled(mode.enabled()), &plan, seeds)
}

fn dual(s: &Scenario, mode: Mode, seeds: SeedPlan) -> Result<DualRun> {
    run_dual(
        &s.source,
        [&s.detectors[0], &s.detectors[1]],
        &s.feedback.with_enabled(mode.enabled()),
        s.n_edges,
        seeds,
        s.trace_cycles,
    )
}

fn analysis_config(s: &Scenario, seeds: SeedPlan) -> AnalysisConfig {
    AnalysisConfig {
        dead_time: s.key_dead_time(),
        trigger_rate: s.source.trigger_rate,
        ec_reveal_fraction: s.ec_reveal_fraction,
        seed: seeds.detectors,
    }
}

fn wants_key_report(s: &Scenario) -> bool {
    s.wants(Analysis::SelfBlinding) || s.wants(Analysis::Randomness)
}

/// Eq.-(2) theory line for a single-detector scenario.
pub fn theory_percentage(s: &Scenario) -> Result<f64> {
    let d = &s.detectors[0];
    let m = dead_gate_count(d.dead_time, s.source.trigger_rate);
    let (_, pct) = simulate_expected_useful(
        s.source.mean_photon_number,
        d.quantum_efficiency,
        m,
        s.block_capacity as u64,
        THEORY_TRIALS,
        s.seed,
    )?;
    Ok(pct)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyHeadline {
    pub key_length: usize,
    pub run_count: usize,
    pub runs_per_100_bits: f64,
    pub anticorrelation_violations: usize,
    pub eve_known_fraction: f64,
    pub battery_passed: Option<usize>,
}

impl KeyHeadline {
    fn new(key: &SiftedKey, report: &SelfBlindingReport) -> Self {
        let battery_passed = (!report.randomness_verdicts.is_empty())
            .then(|| report.randomness_verdicts.values().filter(|v| v.pass).count());
        KeyHeadline {
            key_length: key.len(),
            run_count: report.runs.len(),
            runs_per_100_bits: if key.is_empty() {
                0.0
            } else {
                100.0 * report.runs.len() as f64 / key.len() as f64
            },
            anticorrelation_violations: report.anticorrelation_violations,
            eve_known_fraction: report.eve_known_fraction,
            battery_passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub stats: StatsReport,
    pub key: Option<KeyHeadline>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub advisories: Vec<Advisory>,
    pub theory_pct: Option<f64>,
    pub modes: Vec<ModeSummary>,
    pub files: Vec<String>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn run_scenario(s: &Scenario, out_dir: &Path, opts: &RunOptions) -> Result<Summary> {
    create_dir(out_dir)?;
    let mut files = Vec::new();
    let mut modes = Vec::new();
    let mut per_block: [Option<Vec<f64>>; 2] = [None, None];
    let mut written = |name: String| -> std::path::PathBuf {
        let p = out_dir.join(&name);
        files.push(name);
        p
    };

    for &mode in opts.modes.modes() {
        let seeds = opts.seeds(s.seed, mode);
        let tag = mode.label();
        if s.is_dual() {
            let run = dual(s, mode, seeds)?;
            output::write_events_csv(&written(format!("events_{tag}.csv")), &run.events)?;
            let stats = dual_stats(s, mode, &run);
            output::write_json(&written(format!("stats_{tag}.json")), &stats)?;
            let key = if wants_key_report(s) {
                let report = security::analyze_key(&run.key, &analysis_config(s, seeds))?;
                output::write_json(&written(format!("self_blinding_{tag}.json")), &report)?;
                Some(KeyHeadline::new(&run.key, &report))
            } else {
                None
            };
            if s.wants(Analysis::KeyExtraction) {
                let preview = &run.key.bits()[..run.key.len().min(s.key_preview_bits)];
                output::write_text(&written(format!("key_{tag}.txt")), &security::render_key_ascii(preview, 50))?;
            }
            if s.trace_cycles > 0 {
                output::write_trace_csv(&written(format!("trace_{tag}.csv")), &run.trace)?;
            }
            modes.push(ModeSummary { stats, key });
        } else {
            let run = single(s, mode, seeds)?;
            output::write_events_csv(&written(format!("events_{tag}.csv")), &run.events)?;
            let stats = single_stats(s, mode, &run);
            output::write_json(&written(format!("stats_{tag}.json")), &stats)?;
            if s.trace_cycles > 0 {
                output::write_trace_csv(&written(format!("trace_{tag}.csv")), &run.trace)?;
            }
            per_block[usize::from(mode == Mode::Off)] = Some(run.blocks.iter().map(|b| b.useful_percentage()).collect());
            modes.push(ModeSummary { stats, key: None });
        }
    }

    let theory_pct = if s.wants(Analysis::UsefulStats) {
        let theory = theory_percentage(s)?;
        output::write_block_series(
            &written("useful_pct_per_block.csv".into()),
            per_block[0].as_deref(),
            per_block[1].as_deref(),
            theory,
        )?;
        Some(theory)
    } else {
        None
    };

    files.push("summary.json".into());
    let summary = Summary {
        scenario: s.name.clone(),
        seed: s.seed,
        advisories: s.advisories(),
        theory_pct,
        modes,
        files,
    };
    output::write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Re-derives the key analysis of a two-detector run from its stored event logs.
pub fn report(s: &Scenario, out_dir: &Path, opts: &RunOptions) -> Result<Vec<String>> {
    if !s.is_dual() {
        return Err(Error::Usage("report re-renders two-detector event logs only".into()));
    }
    let mut files = Vec::new();
    for &mode in opts.modes.modes() {
        let tag = mode.label();
        let events_path = out_dir.join(format!("events_{tag}.csv"));
        if !events_path.exists() {
            continue;
        }
        let events = output::read_events_csv(&events_path)?;
        let key = SiftedKey::from_events(&events);
        let seeds = opts.seeds(s.seed, mode);
        let name = format!("self_blinding_{tag}.json");
        let report = security::analyze_key(&key, &analysis_config(s, seeds))?;
        output::write_json(&out_dir.join(&name), &report)?;
        files.push(name);
        let name = format!("key_{tag}.txt");
        let preview = &key.bits()[..key.len().min(s.key_preview_bits)];
        output::write_text(&out_dir.join(&name), &security::render_key_ascii(preview, 50))?;
        files.push(name);
    }
    if files.is_empty() {
        return Err(Error::io(
            out_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no event logs found"),
        ));
    }
    Ok(files)
}

/// Parameter grid for `sweep`. Empty axes keep the scenario's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub mean_photon_number: Vec<f64>,
    pub quantum_efficiency: Vec<f64>,
    pub dead_time: Vec<f64>,
}

impl SweepGrid {
    fn points(&self, s: &Scenario) -> Vec<(f64, f64, f64)> {
        let or = |v: &[f64], fallback: f64| if v.is_empty() { vec![fallback] } else { v.to_vec() };
        let mus = or(&self.mean_photon_number, s.source.mean_photon_number);
        let etas = or(&self.quantum_efficiency, s.detectors[0].quantum_efficiency);
        let deads = or(&self.dead_time, s.detectors[0].dead_time);
        let mut out = Vec::new();
        for &mu in &mus {
            for &eta in &etas {
                for &dead in &deads {
                    out.push((mu, eta, dead));
                }
            }
        }
        out
    }
}

fn with_point(s: &Scenario, mu: f64, eta: f64, dead_time: f64, grid: &SweepGrid) -> Result<Scenario> {
    let mut p = s.clone();
    p.source.mean_photon_number = mu;
    p.source.validate()?;
    for (i, d) in p.detectors.iter_mut().enumerate() {
        d.quantum_efficiency = eta;
        d.dead_time = dead_time;
        d.validate(&format!("detector[{i}]"))?;
    }
    if !grid.dead_time.is_empty() {
        p.feedback.cmp_value = min_cmp_value(&p.detectors, p.source.trigger_rate);
    }
    Ok(p)
}

fn evaluate(s: &Scenario, mode: Mode, opts: &RunOptions) -> Result<Vec<(&'static str, f64)>> {
    let seeds = opts.seeds(s.seed, mode);
    if s.is_dual() {
        let run = dual(s, mode, seeds)?;
        let report = security::analyze_key(&run.key, &analysis_config(s, seeds))?;
        let head = KeyHeadline::new(&run.key, &report);
        let runs_p = report.randomness_verdicts.get(randomness::RUNS).map_or(f64::NAN, |v| v.p_value);
        Ok(vec![
            ("coincidence_fraction", run.coincidence.coincidence_fraction),
            ("n_events", run.coincidence.n_events as f64),
            ("key_length", head.key_length as f64),
            ("runs_per_100_bits", head.runs_per_100_bits),
            ("eve_known_fraction", head.eve_known_fraction),
            ("runs_test_p_value", runs_p),
        ])
    } else {
        let run = single(s, mode, seeds)?;
        Ok(vec![
            ("useful_percentage", run.stats.useful_percentage),
            ("positive_detections", run.stats.positive_detections as f64),
        ])
    }
}

/// Runs every grid point in both requested modes on a worker pool and writes
/// `sweep.csv` (long format: one metric per row).
pub fn sweep(s: &Scenario, grid: &SweepGrid, out_dir: &Path, opts: &RunOptions) -> Result<Vec<SweepRow>> {
    create_dir(out_dir)?;
    let points = grid
        .points(s)
        .into_iter()
        .map(|(mu, eta, dead)| with_point(s, mu, eta, dead, grid))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(&Scenario, Mode)> = points
        .iter()
        .flat_map(|p| opts.modes.modes().iter().map(move |&m| (p, m)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(p, mode)| evaluate(p, mode, opts).map(|metrics| (p, mode, metrics)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (p, mode, metrics) in results {
        for (metric, value) in metrics {
            rows.push(SweepRow {
                mean_photon_number: p.source.mean_photon_number,
                quantum_efficiency: p.detectors[0].quantum_efficiency,
                dead_time: p.detectors[0].dead_time,
                mode: mode.label().into(),
                metric: metric.into(),
                value,
            });
        }
    }
    output::write_sweep_csv(&out_dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}
