//! Self-blinding analysis of two-detector keys.
//!
//! When the dead time exceeds the trigger period, a detector that has just
//! fired stays blind while its partner remains armed. Any two key bits closer
//! than the dead time then come from different detectors, so such groups
//! alternate strictly and one disclosed bit reveals the whole group.

pub mod randomness;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::DetectionEvent;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub use randomness::{randomness_battery, TestVerdict};

/// Key bits derived from announced non-vacuum counts, with their gate times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiftedKey {
    bits: Vec<u8>,
    times: Vec<f64>,
}

impl SiftedKey {
    pub fn new(bits: Vec<u8>, times: Vec<f64>) -> Result<Self> {
        if bits.len() != times.len() {
            return Err(Error::Usage(format!(
                "key has {} bits but {} timestamps",
                bits.len(),
                times.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Usage("key bits must be 0 or 1".into()));
        }
        if times.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::Usage("key timestamps must be strictly increasing".into()));
        }
        Ok(SiftedKey { bits, times })
    }

    /// D0-only clicks give 0, D1-only clicks give 1; double clicks and
    /// single-detector events are skipped.
    pub fn from_events(events: &[DetectionEvent]) -> Self {
        let mut key = SiftedKey::default();
        for ev in events {
            let bit = match (ev.d0, ev.d1) {
                (true, Some(false)) => 0,
                (false, Some(true)) => 1,
                _ => continue,
            };
            key.bits.push(bit);
            key.times.push(ev.time);
        }
        key
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// True when the dead time is longer than the trigger period.
pub fn check_self_blinding(dead_time: f64, trigger_rate: f64) -> Result<bool> {
    if trigger_rate.is_nan() || trigger_rate <= 0.0 {
        return Err(Error::Domain(format!("trigger rate must be > 0 Hz, got {trigger_rate}")));
    }
    Ok(dead_time > 1.0 / trigger_rate)
}

/// Maximal group of consecutive key bits with every neighbour pair closer than the dead time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadTimeRun {
    pub start_index: usize,
    pub length: usize,
}

impl DeadTimeRun {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start_index..self.start_index + self.length
    }
}

pub fn find_dead_time_runs(key: &SiftedKey, dead_time: f64) -> Vec<DeadTimeRun> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=key.len() {
        let linked = i < key.len() && key.times[i] - key.times[i - 1] < dead_time;
        if !linked {
            if i - start >= 2 {
                runs.push(DeadTimeRun {
                    start_index: start,
                    length: i - start,
                });
            }
            start = i;
        }
    }
    runs
}

/// Counts adjacent equal bits inside runs. Zero for an ideal detector pair.
pub fn count_anticorrelation_violations(key: &SiftedKey, runs: &[DeadTimeRun]) -> usize {
    runs.iter()
        .map(|run| {
            key.bits[run.range()]
                .windows(2)
                .filter(|w| w[0] == w[1])
                .count()
        })
        .sum()
}

/// Uniformly chosen positions disclosed during error correction.
pub fn sample_revealed_positions<R: Rng + ?Sized>(key_len: usize, fraction: f64, rng: &mut R) -> BTreeSet<usize> {
    let count = ((key_len as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    index::sample(rng, key_len, count.min(key_len)).into_iter().collect()
}

/// Fraction of the key a passive eavesdropper learns beyond the disclosed
/// positions: every run touching a disclosed bit is known in full.
pub fn eve_passive_leakage(key: &SiftedKey, dead_time: f64, revealed: &BTreeSet<usize>) -> Result<f64> {
    if let Some(&last) = revealed.iter().next_back() {
        if last >= key.len() {
            return Err(Error::Usage(format!(
                "revealed position {last} outside key of length {}",
                key.len()
            )));
        }
    }
    if key.is_empty() {
        return Ok(0.0);
    }
    let extra: usize = find_dead_time_runs(key, dead_time)
        .iter()
        .map(|run| {
            let hits = revealed.range(run.range()).count();
            if hits == 0 {
                0
            } else {
                run.length - hits
            }
        })
        .sum();
    Ok(extra as f64 / key.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfBlindingReport {
    pub condition_violated: bool,
    pub runs: Vec<DeadTimeRun>,
    pub anticorrelation_violations: usize,
    pub eve_known_fraction: f64,
    /// Empty when the key is too short for the battery.
    pub randomness_verdicts: BTreeMap<String, TestVerdict>,
}

/// Settings for [`analyze_key`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub dead_time: f64,
    pub trigger_rate: f64,
    pub ec_reveal_fraction: f64,
    pub seed: u64,
}

pub fn analyze_key(key: &SiftedKey, cfg: &AnalysisConfig) -> Result<SelfBlindingReport> {
    let condition_violated = check_self_blinding(cfg.dead_time, cfg.trigger_rate)?;
    let runs = find_dead_time_runs(key, cfg.dead_time);
    let anticorrelation_violations = count_anticorrelation_violations(key, &runs);
    let mut sampler = rng::stream(cfg.seed, Stream::EcSampling);
    let revealed = sample_revealed_positions(key.len(), cfg.ec_reveal_fraction, &mut sampler);
    let eve_known_fraction = eve_passive_leakage(key, cfg.dead_time, &revealed)?;
    let randomness_verdicts = if key.len() >= randomness::MIN_BITS {
        randomness_battery(key.bits())?
    } else {
        BTreeMap::new()
    };
    Ok(SelfBlindingReport {
        condition_violated,
        runs,
        anticorrelation_violations,
        eve_known_fraction,
        randomness_verdicts,
    })
}

/// Renders bits as a row of circles: `o` for 0, `●` for 1.
pub fn render_key_ascii(bits: &[u8], width: usize) -> String {
    let width = width.max(1);
    let mut out = String::new();
    for line in bits.chunks(width) {
        out.extend(line.iter().map(|&b| if b == 0 { 'o' } else { '●' }));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(bits: &[u8], times: &[f64]) -> SiftedKey {
        SiftedKey::new(bits.to_vec(), times.to_vec()).unwrap()
    }

    fn evenly_spaced(bits: &[u8], spacing: f64) -> SiftedKey {
        let times: Vec<f64> = (0..bits.len()).map(|i| i as f64 * spacing).collect();
        key(bits, &times)
    }

    #[test]
    fn self_blinding_condition() {
        assert!(check_self_blinding(10e-6, 8e6).unwrap());
        assert!(check_self_blinding(10e-6, 2.5e6).unwrap());
        assert!(!check_self_blinding(0.0, 8e6).unwrap());
        // 1 / 415 kHz = 2.4096 us
        assert!(!check_self_blinding(2.4e-6, 415e3).unwrap());
        assert!(check_self_blinding(2.5e-6, 415e3).unwrap());
        assert!(check_self_blinding(1e-6, 0.0).is_err());
    }

    #[test]
    fn key_invariants_enforced() {
        assert!(SiftedKey::new(vec![0, 1], vec![0.0]).is_err());
        assert!(SiftedKey::new(vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(SiftedKey::new(vec![0, 2], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn sparse_key_has_no_runs() {
        let rate = 4e6;
        let k = evenly_spaced(&[0, 1, 1, 0, 1], 2.0 / rate);
        assert!(find_dead_time_runs(&k, 1.9 / rate).is_empty());
    }

    #[test]
    fn dense_key_is_one_run() {
        let k = evenly_spaced(&[0, 1, 0, 1, 0], 1e-6);
        let runs = find_dead_time_runs(&k, 2e-6);
        assert_eq!(runs, vec![DeadTimeRun { start_index: 0, length: 5 }]);
        assert_eq!(count_anticorrelation_violations(&k, &runs), 0);
    }

    #[test]
    fn counts_violations_inside_runs() {
        let k = evenly_spaced(&[1, 0, 1, 0], 1e-6);
        let runs = find_dead_time_runs(&k, 2e-6);
        assert_eq!(count_anticorrelation_violations(&k, &runs), 0);
        let k = evenly_spaced(&[1, 1, 0], 1e-6);
        let runs = find_dead_time_runs(&k, 2e-6);
        assert_eq!(count_anticorrelation_violations(&k, &runs), 1);
    }

    #[test]
    fn leakage_examples() {
        let sparse = evenly_spaced(&[0, 1, 0, 1], 10e-6);
        let all: BTreeSet<usize> = (0..4).collect();
        assert_eq!(eve_passive_leakage(&sparse, 1e-6, &all).unwrap(), 0.0);

        // run of five at indices 2..7 in a ten-bit key
        let times = [0.0, 20e-6, 40e-6, 41e-6, 42e-6, 43e-6, 44e-6, 60e-6, 80e-6, 100e-6];
        let k = key(&[0, 1, 0, 1, 0, 1, 0, 1, 1, 0], &times);
        let revealed = BTreeSet::from([4]);
        assert!((eve_passive_leakage(&k, 2e-6, &revealed).unwrap() - 0.4).abs() < 1e-15);
        assert!(eve_passive_leakage(&k, 2e-6, &BTreeSet::from([10])).is_err());
    }

    #[test]
    fn ascii_rendering() {
        assert_eq!(render_key_ascii(&[0, 1, 1, 0, 1], 3), "o●●\no●\n");
    }

    #[test]
    fn key_from_events_drops_double_clicks() {
        let ev = |gate_index, d0, d1| DetectionEvent {
            gate_index,
            time: gate_index as f64,
            d0,
            d1: Some(d1),
        };
        let events = [ev(0, true, false), ev(1, true, true), ev(2, false, true)];
        let k = SiftedKey::from_events(&events);
        assert_eq!(k.bits(), &[0, 1]);
        assert_eq!(k.times(), &[0.0, 2.0]);
    }

    fn arb_key() -> impl Strategy<Value = SiftedKey> {
        proptest::collection::vec((any::<bool>(), 1u32..20), 0..200).prop_map(|v| {
            let mut t = 0.0;
            let (bits, times) = v
                .into_iter()
                .map(|(b, gap)| {
                    t += gap as f64 * 1e-7;
                    (b as u8, t)
                })
                .unzip();
            SiftedKey::new(bits, times).unwrap()
        })
    }

    proptest! {
        #[test]
        fn runs_are_disjoint_and_maximal(k in arb_key(), dead in 1e-7f64..2e-6) {
            let runs = find_dead_time_runs(&k, dead);
            let t = k.times();
            for w in runs.windows(2) {
                prop_assert!(w[0].start_index + w[0].length <= w[1].start_index);
            }
            for r in &runs {
                prop_assert!(r.length >= 2);
                for i in r.start_index + 1..r.start_index + r.length {
                    prop_assert!(t[i] - t[i - 1] < dead);
                }
                if r.start_index > 0 {
                    prop_assert!(t[r.start_index] - t[r.start_index - 1] >= dead);
                }
                let end = r.start_index + r.length;
                if end < t.len() {
                    prop_assert!(t[end] - t[end - 1] >= dead);
                }
            }
        }

        #[test]
        fn leakage_grows_with_disclosure(
            k in arb_key(),
            dead in 1e-7f64..2e-6,
            picks in proptest::collection::vec(any::<proptest::sample::Index>(), 0..40),
        ) {
            prop_assume!(!k.is_empty());
            // Eve's known set (revealed plus inferred) never shrinks as disclosure grows
            let mut revealed = BTreeSet::new();
            let mut known_prev = 0.0;
            for p in picks {
                revealed.insert(p.index(k.len()));
                let extra = eve_passive_leakage(&k, dead, &revealed).unwrap();
                let known = extra + revealed.len() as f64 / k.len() as f64;
                prop_assert!(known + 1e-12 >= known_prev);
                known_prev = known;
            }
        }
    }
}
