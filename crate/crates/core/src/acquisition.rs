//! Single- and dual-detector acquisitions.
//!
//! Every main-clock edge fires the laser. The clock manager decides whether
//! the edge also reaches the detectors and the memory; a delivered edge
//! produces one [`TriggerRecord`]. Records written while a detector is dead
//! are futile: they hold a zero that carries no information.
//!
//! Single-detector runs fill fixed-size cache blocks. Between blocks the
//! memory is read out; during readout the laser keeps pulsing but no gates
//! are issued, and the pause is long enough for the detector and the clock
//! manager to settle. Each block therefore starts from a recovered detector.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::clock_manager::{ClockManager, FeedbackConfig, TraceRow};
use crate::error::{Error, Result};
use crate::photon_source::{split_photons, PhotonTrain, SourceConfig};
use crate::rng::{self, SimRng, Stream};
use crate::security::SiftedKey;
use crate::spad::{dead_gate_count, GateOutcome, SpadConfig, SpadState};

pub const DEFAULT_BLOCK_CAPACITY: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerRecord {
    /// Index among delivered edges.
    pub gate_index: u64,
    pub time: f64,
    pub outcome_d0: bool,
    pub outcome_d1: Option<bool>,
}

/// A delivered gate on which at least one detector clicked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub gate_index: u64,
    pub time: f64,
    pub d0: bool,
    /// `None` in single-detector runs.
    pub d1: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheBlock {
    pub capacity: usize,
    /// Retained only when requested; the counters are always filled.
    pub records: Vec<TriggerRecord>,
    pub record_count: usize,
    pub useful_count: usize,
    pub futile_count: usize,
    /// Main-clock edges withheld by the clock manager while the block filled.
    pub suppressed_count: usize,
    pub positive_detections: usize,
    /// Dead gates of clicks near the end of the block that fell past its last record.
    pub truncated_dead_gates: usize,
}

impl CacheBlock {
    fn new(capacity: usize) -> Self {
        CacheBlock {
            capacity,
            records: Vec::new(),
            record_count: 0,
            useful_count: 0,
            futile_count: 0,
            suppressed_count: 0,
            positive_detections: 0,
            truncated_dead_gates: 0,
        }
    }

    /// Main-clock edges spanned by the block.
    pub fn edges_spanned(&self) -> usize {
        self.useful_count + self.futile_count + self.suppressed_count
    }

    /// Percentage of records in the block that are useful.
    pub fn useful_percentage(&self) -> f64 {
        if self.record_count == 0 {
            return 100.0;
        }
        100.0 * self.useful_count as f64 / self.record_count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Main-clock edges spanned by all blocks, readout pauses excluded.
    pub total_edges: u64,
    pub records: u64,
    pub positive_detections: u64,
    pub futile_records: u64,
    pub suppressed_edges: u64,
    pub suppressed_or_futile: u64,
    pub truncated_dead_gates: u64,
    /// Gates lost to the dead window after each click.
    pub dead_gates_per_click: u32,
    pub useful_percentage: f64,
}

/// Useful-trigger percentage `100 (n - k m) / n` for `n` triggers, `k`
/// detections and `m` dead triggers per detection.
pub fn useful_percentage(n_total: u64, k: u64, m: u64) -> Result<f64> {
    if n_total == 0 {
        return Err(Error::Domain("total trigger count must be > 0".into()));
    }
    let lost = k
        .checked_mul(m)
        .filter(|&lost| lost <= n_total)
        .ok_or_else(|| Error::Domain(format!("k*m = {k}*{m} exceeds the {n_total} triggers")))?;
    Ok(100.0 * (n_total - lost) as f64 / n_total as f64)
}

/// Monte-Carlo estimate of the mean detection count and mean useful
/// percentage over `trials` blocks of `n` gates. Each click is followed by
/// `m` insensitive gates. A block whose `k m` exceeds `n` contributes 0%.
pub fn simulate_expected_useful(mu: f64, eta: f64, m: u32, n: u64, trials: u32, seed: u64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::Usage("at least one trial is required".into()));
    }
    if n == 0 {
        return Err(Error::Domain("block length must be > 0".into()));
    }
    crate::spad::detection_probability(mu, eta)?;
    let mut rng = rng::stream(seed, Stream::Trials);
    let poisson = (mu > 0.0).then(|| Poisson::new(mu).expect("positive mean"));
    let miss = 1.0 - eta;
    let (mut k_sum, mut pct_sum) = (0.0, 0.0);
    for _ in 0..trials {
        let mut k = 0u64;
        let mut dead = 0u32;
        for _ in 0..n {
            let photons = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
            if dead > 0 {
                dead -= 1;
                continue;
            }
            if photons > 0 && rng.random::<f64>() < 1.0 - miss.powf(photons as f64) {
                k += 1;
                dead = m;
            }
        }
        k_sum += k as f64;
        pct_sum += useful_percentage(n, k, u64::from(m)).unwrap_or(0.0);
    }
    Ok((k_sum / f64::from(trials), pct_sum / f64::from(trials)))
}

struct Detector {
    config: SpadConfig,
    state: SpadState,
    rng: SimRng,
}

struct EdgeOutcome {
    time: f64,
    delivered: bool,
    gates: [Option<GateOutcome>; 2],
}

/// Edge-by-edge driver shared by single and dual runs.
struct Engine {
    train: PhotonTrain,
    photon_rng: SimRng,
    splitter_rng: SimRng,
    detectors: Vec<Detector>,
    clock: ClockManager,
    edge: u64,
    delivered: u64,
    trace: Vec<TraceRow>,
    trace_limit: u64,
}

impl Engine {
    fn new(source: &SourceConfig, spads: &[&SpadConfig], fb: &FeedbackConfig, seeds: SeedPlan) -> Self {
        Engine {
            train: PhotonTrain::new(source.clone()),
            photon_rng: rng::stream(seeds.photons, Stream::Photons),
            splitter_rng: rng::stream(seeds.photons, Stream::Splitter),
            detectors: spads
                .iter()
                .enumerate()
                .map(|(i, cfg)| Detector {
                    config: (*cfg).clone(),
                    state: SpadState::new(),
                    rng: rng::stream(seeds.detectors, Stream::Detector(i as u8)),
                })
                .collect(),
            clock: ClockManager::new(fb.clone()),
            edge: 0,
            delivered: 0,
            trace: Vec::new(),
            trace_limit: 0,
        }
    }

    /// Advances one main-clock edge. With `gating` false (readout pause) the
    /// clock manager still runs but nothing reaches the detectors.
    fn step(&mut self, gating: bool) -> EdgeOutcome {
        let index = self.edge;
        self.edge += 1;
        let time = index as f64 / self.train.config().trigger_rate;
        let photons = self.train.sample(index, &mut self.photon_rng);
        let split = if self.detectors.len() == 2 {
            split_photons(photons, self.train.config().splitter_ratio, &mut self.splitter_rng)
        } else {
            (photons, 0)
        };
        let clock_delivered = self.clock.advance(time);
        if index < self.trace_limit {
            let row = self.clock.trace_row(index, time, clock_delivered);
            self.trace.push(row);
        }
        let delivered = clock_delivered && gating;
        let mut gates = [None, None];
        if delivered {
            self.delivered += 1;
            let counts = [split.0, split.1];
            for (i, det) in self.detectors.iter_mut().enumerate() {
                let out = det
                    .state
                    .apply_gate(&det.config, time, counts[i], &mut det.rng)
                    .expect("edge times increase monotonically");
                if let Some(t) = out.avalanche_out_time {
                    self.clock.push_avalanche(t);
                }
                gates[i] = Some(out);
            }
        }
        EdgeOutcome { time, delivered, gates }
    }
}

/// Seeds for the photon train and for detector randomness. Sharing the photon
/// seed between ON and OFF runs pairs their light pulse by pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub photons: u64,
    pub detectors: u64,
}

impl SeedPlan {
    pub fn single(seed: u64) -> Self {
        SeedPlan {
            photons: seed,
            detectors: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    pub n_blocks: usize,
    pub block_capacity: usize,
    pub keep_records: bool,
    /// Leading main-clock cycles to capture in the clock-manager trace.
    pub trace_cycles: u64,
}

impl BlockPlan {
    pub fn new(n_blocks: usize) -> Self {
        BlockPlan {
            n_blocks,
            block_capacity: DEFAULT_BLOCK_CAPACITY,
            keep_records: false,
            trace_cycles: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SingleRun {
    pub blocks: Vec<CacheBlock>,
    pub stats: RunStats,
    pub events: Vec<DetectionEvent>,
    pub trace: Vec<TraceRow>,
}

pub fn run_single(
    source: &SourceConfig,
    spad: &SpadConfig,
    fb: &FeedbackConfig,
    plan: &BlockPlan,
    seeds: SeedPlan,
) -> Result<SingleRun> {
    if plan.n_blocks == 0 || plan.block_capacity == 0 {
        return Err(Error::Usage("need at least one block of non-zero capacity".into()));
    }
    let period = source.period();
    let dead_gates = dead_gate_count(spad.dead_time, source.trigger_rate);
    let response = crate::clock_manager::total_response_time(spad, fb);
    let readout_pause = u64::from(dead_gates.max(fb.cmp_value)) + (response / period).ceil() as u64 + 1;

    let mut engine = Engine::new(source, &[spad], fb, seeds);
    engine.trace_limit = plan.trace_cycles;
    let mut blocks = Vec::with_capacity(plan.n_blocks);
    let mut events = Vec::new();

    for block_index in 0..plan.n_blocks {
        if block_index > 0 {
            for _ in 0..readout_pause {
                engine.step(false);
            }
        }
        let mut block = CacheBlock::new(plan.block_capacity);
        let mut click_positions = Vec::new();
        while block.record_count < plan.block_capacity {
            let gate_index = engine.delivered;
            let edge = engine.step(true);
            if !edge.delivered {
                block.suppressed_count += 1;
                continue;
            }
            let gate = edge.gates[0].expect("delivered edge gates the detector");
            if gate.insensitive {
                block.futile_count += 1;
            } else {
                block.useful_count += 1;
            }
            if gate.clicked {
                block.positive_detections += 1;
                click_positions.push(block.record_count);
                events.push(DetectionEvent {
                    gate_index,
                    time: edge.time,
                    d0: true,
                    d1: None,
                });
            }
            if plan.keep_records {
                block.records.push(TriggerRecord {
                    gate_index,
                    time: edge.time,
                    outcome_d0: gate.clicked,
                    outcome_d1: None,
                });
            }
            block.record_count += 1;
        }
        if !fb.enabled {
            let last = plan.block_capacity - 1;
            block.truncated_dead_gates = click_positions
                .iter()
                .map(|&p| (dead_gates as usize).saturating_sub(last - p))
                .sum();
        }
        blocks.push(block);
    }

    let stats = summarize(&blocks, dead_gates);
    Ok(SingleRun {
        blocks,
        stats,
        events,
        trace: engine.trace,
    })
}

fn summarize(blocks: &[CacheBlock], dead_gates: u32) -> RunStats {
    let sum = |f: fn(&CacheBlock) -> usize| blocks.iter().map(f).sum::<usize>() as u64;
    let records = sum(|b| b.record_count);
    let useful = sum(|b| b.useful_count);
    let futile = sum(|b| b.futile_count);
    let suppressed = sum(|b| b.suppressed_count);
    RunStats {
        total_edges: sum(CacheBlock::edges_spanned),
        records,
        positive_detections: sum(|b| b.positive_detections),
        futile_records: futile,
        suppressed_edges: suppressed,
        suppressed_or_futile: futile + suppressed,
        truncated_dead_gates: sum(|b| b.truncated_dead_gates),
        dead_gates_per_click: dead_gates,
        useful_percentage: if records == 0 {
            100.0
        } else {
            100.0 * useful as f64 / records as f64
        },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceStats {
    pub n_edges: u64,
    pub delivered_gates: u64,
    /// Delivered gates with at least one click.
    pub n_events: u64,
    /// Gates on which both detectors clicked.
    pub n_coincidences: u64,
    pub d0_only: u64,
    pub d1_only: u64,
    /// `n_coincidences / n_events`.
    pub coincidence_fraction: f64,
    /// `n_coincidences / delivered_gates`.
    pub coincidence_per_gate: f64,
}

impl CoincidenceStats {
    pub fn from_events(events: &[DetectionEvent], n_edges: u64, delivered_gates: u64) -> Self {
        let mut s = CoincidenceStats {
            n_edges,
            delivered_gates,
            ..Default::default()
        };
        for ev in events {
            match (ev.d0, ev.d1.unwrap_or(false)) {
                (true, true) => s.n_coincidences += 1,
                (true, false) => s.d0_only += 1,
                (false, true) => s.d1_only += 1,
                (false, false) => continue,
            }
            s.n_events += 1;
        }
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        s.coincidence_fraction = ratio(s.n_coincidences, s.n_events);
        s.coincidence_per_gate = ratio(s.n_coincidences, s.delivered_gates);
        s
    }

    pub fn double_click_count(&self) -> u64 {
        self.n_coincidences
    }
}

#[derive(Debug, Clone)]
pub struct DualRun {
    pub events: Vec<DetectionEvent>,
    /// Delivered gates on which at least one detector was dead.
    pub futile_gates: u64,
    pub clicks: [u64; 2],
    pub coincidence: CoincidenceStats,
    pub key: SiftedKey,
    pub trace: Vec<TraceRow>,
}

/// Two detectors behind a beam splitter sharing one gated clock. With
/// disabling ON the clock manager sees the OR of both avalanche outputs.
pub fn run_dual(
    source: &SourceConfig,
    spads: [&SpadConfig; 2],
    fb: &FeedbackConfig,
    n_edges: u64,
    seeds: SeedPlan,
    trace_cycles: u64,
) -> Result<DualRun> {
    if n_edges == 0 {
        return Err(Error::Usage("need at least one clock edge".into()));
    }
    let mut engine = Engine::new(source, &spads, fb, seeds);
    engine.trace_limit = trace_cycles;
    let mut events = Vec::new();
    let mut futile_gates = 0;
    let mut clicks = [0u64; 2];
    for _ in 0..n_edges {
        let gate_index = engine.delivered;
        let edge = engine.step(true);
        if !edge.delivered {
            continue;
        }
        let [g0, g1] = edge.gates.map(|g| g.expect("delivered edge gates both detectors"));
        if g0.insensitive || g1.insensitive {
            futile_gates += 1;
        }
        let (d0, d1) = (g0.clicked, g1.clicked);
        clicks[0] += u64::from(d0);
        clicks[1] += u64::from(d1);
        if d0 || d1 {
            events.push(DetectionEvent {
                gate_index,
                time: edge.time,
                d0,
                d1: Some(d1),
            });
        }
    }
    let coincidence = CoincidenceStats::from_events(&events, n_edges, engine.delivered);
    let key = SiftedKey::from_events(&events);
    Ok(DualRun {
        events,
        futile_gates,
        clicks,
        coincidence,
        key,
        trace: engine.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spad::detection_probability;

    pub(crate) fn block_spad() -> SpadConfig {
        // 20 dead gates at 4 MHz
        SpadConfig {
            dead_time: 5.2e-6,
            ..SpadConfig::default()
        }
    }

    fn fb(enabled: bool) -> FeedbackConfig {
        FeedbackConfig {
            cmp_value: 20,
            enabled,
            ..FeedbackConfig::default()
        }
    }

    #[test]
    fn useful_percentage_closed_form() {
        assert!((useful_percentage(8192, 68, 20).unwrap() - 83.398).abs() < 1e-3);
        assert_eq!(useful_percentage(8192, 0, 20).unwrap(), 100.0);
        assert_eq!(useful_percentage(100, 5, 20).unwrap(), 0.0);
        assert!(matches!(useful_percentage(100, 6, 20), Err(Error::Domain(_))));
        assert!(useful_percentage(0, 0, 0).is_err());
    }

    #[test]
    fn expected_useful_trivial_cases() {
        let (k, pct) = simulate_expected_useful(0.0, 0.1, 20, 8192, 3, 1).unwrap();
        assert_eq!((k, pct), (0.0, 100.0));
        let (k, pct) = simulate_expected_useful(0.1, 0.1, 0, 8192, 3, 1).unwrap();
        assert!(k > 0.0);
        assert_eq!(pct, 100.0);
        assert!(simulate_expected_useful(0.1, 0.1, 20, 8192, 0, 1).is_err());
    }

    #[test]
    fn on_mode_blocks_are_pure() {
        let src = SourceConfig::default();
        let run = run_single(&src, &block_spad(), &fb(true), &BlockPlan::new(5), SeedPlan::single(3)).unwrap();
        for b in &run.blocks {
            assert_eq!(b.futile_count, 0);
            assert_eq!(b.useful_percentage(), 100.0);
            // only the last click's suppression can run past the block end
            let k = b.positive_detections;
            assert!(b.suppressed_count <= k * 20 && b.suppressed_count + 20 >= k * 20);
        }
        assert_eq!(run.stats.useful_percentage, 100.0);
    }

    #[test]
    fn off_mode_identity_per_block() {
        let src = SourceConfig::default();
        let run = run_single(&src, &block_spad(), &fb(false), &BlockPlan::new(20), SeedPlan::single(4)).unwrap();
        assert_eq!(run.stats.dead_gates_per_click, 20);
        for b in &run.blocks {
            assert_eq!(b.suppressed_count, 0);
            assert_eq!(b.edges_spanned(), 8192);
            let k = b.positive_detections;
            assert_eq!(b.futile_count + b.truncated_dead_gates, k * 20);
            if b.truncated_dead_gates == 0 {
                assert_eq!(b.useful_percentage(), useful_percentage(8192, k as u64, 20).unwrap());
            }
        }
    }

    #[test]
    fn dark_source_is_mode_independent() {
        let src = SourceConfig {
            mean_photon_number: 0.0,
            ..SourceConfig::default()
        };
        let plan = BlockPlan { keep_records: true, ..BlockPlan::new(2) };
        let on = run_single(&src, &block_spad(), &fb(true), &plan, SeedPlan::single(1)).unwrap();
        let off = run_single(&src, &block_spad(), &fb(false), &plan, SeedPlan::single(1)).unwrap();
        assert_eq!(on.blocks, off.blocks);
        assert_eq!(on.stats.useful_percentage, 100.0);
        assert!(on.events.is_empty());

        let dual = run_dual(&src, [&block_spad(), &block_spad()], &fb(true), 10_000, SeedPlan::single(1), 0).unwrap();
        assert!(dual.events.is_empty() && dual.key.is_empty());
    }

    #[test]
    fn records_are_strictly_ordered() {
        let plan = BlockPlan { keep_records: true, ..BlockPlan::new(3) };
        let run = run_single(&SourceConfig::default(), &block_spad(), &fb(true), &plan, SeedPlan::single(8)).unwrap();
        let recs: Vec<_> = run.blocks.iter().flat_map(|b| b.records.iter()).collect();
        assert_eq!(recs.len(), 3 * 8192);
        for w in recs.windows(2) {
            assert!(w[1].gate_index > w[0].gate_index && w[1].time > w[0].time);
        }
    }

    #[test]
    fn dual_on_keeps_detectors_in_lockstep() {
        // every delivered gate finds both detectors armed
        let src = SourceConfig {
            mean_photon_number: 4.0,
            ..SourceConfig::default()
        };
        let spad = SpadConfig::default();
        let f = FeedbackConfig {
            cmp_value: crate::clock_manager::min_cmp_value([&spad], src.trigger_rate),
            ..FeedbackConfig::default()
        };
        let mut engine = Engine::new(&src, &[&spad, &spad], &f, SeedPlan::single(2));
        for _ in 0..200_000 {
            let e = engine.step(true);
            if e.delivered {
                let [a, b] = e.gates.map(|g| g.unwrap());
                assert!(!a.insensitive && !b.insensitive);
            } else {
                assert!(e.gates.iter().all(Option::is_none));
            }
        }
    }

    #[test]
    fn dual_on_coincidences_follow_independence() {
        let src = SourceConfig {
            mean_photon_number: 4.0,
            ..SourceConfig::default()
        };
        let spad = SpadConfig::default();
        let f = FeedbackConfig {
            cmp_value: 40,
            ..FeedbackConfig::default()
        };
        let run = run_dual(&src, [&spad, &spad], &f, 4_000_000, SeedPlan::single(6), 0).unwrap();
        let p = detection_probability(2.0, 0.1).unwrap();
        let expected = p * p / (1.0 - (1.0 - p) * (1.0 - p));
        let n = run.coincidence.n_events as f64;
        let sigma = (expected * (1.0 - expected) / n).sqrt();
        assert!((run.coincidence.coincidence_fraction - expected).abs() < 3.0 * sigma);
    }

    #[test]
    fn monotone_in_intensity() {
        let mut prev = 101.0;
        for mu in [0.05, 0.1, 0.2, 0.4] {
            let (_, pct) = simulate_expected_useful(mu, 0.1, 20, 8192, 200, 77).unwrap();
            assert!(pct < prev, "mu {mu}: {pct} !< {prev}");
            prev = pct;
        }
    }
}
