//! C ABI over `tdsim-core`.
//!
//! Every fallible function returns a [`TdsimStatus`]; on failure the message is
//! available from [`tdsim_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with their matching `_free`.
//! Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tdsim_core::acquisition::{run_dual, run_single, BlockPlan, DualRun, SeedPlan, SingleRun};
use tdsim_core::cli::{self, ModeSelection, RunOptions};
use tdsim_core::clock_manager;
use tdsim_core::scenario::{self, LoadedScenario};
use tdsim_core::security::{self, randomness, AnalysisConfig};
use tdsim_core::{acquisition, spad, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    Io = 5,
    Domain = 6,
    Panic = 7,
}

impl From<&Error> for TdsimStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse { .. } => TdsimStatus::Parse,
            Error::Validation { .. } => TdsimStatus::Validation,
            Error::Io { .. } | Error::Csv { .. } => TdsimStatus::Io,
            Error::Domain(_) => TdsimStatus::Domain,
            Error::Usage(_) => TdsimStatus::InvalidArgument,
        }
    }
}

/// Which arm of the trigger-disabling loop to simulate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdsimMode {
    Both = 0,
    On = 1,
    Off = 2,
}

/// Loaded scenario plus its advisories.
pub struct TdsimScenario {
    loaded: LoadedScenario,
    codes: Vec<CString>,
    messages: Vec<CString>,
}

impl TdsimScenario {
    fn new(loaded: LoadedScenario) -> Self {
        let c = |s: &str| CString::new(s.replace('\0', " ")).unwrap_or_default();
        TdsimScenario {
            codes: loaded.advisories.iter().map(|a| c(a.code)).collect(),
            messages: loaded.advisories.iter().map(|a| c(&a.message)).collect(),
            loaded,
        }
    }
}

/// Result of a single-detector block acquisition.
pub struct TdsimSingleResult(SingleRun);

/// Result of a two-detector run.
pub struct TdsimDualResult(DualRun);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TdsimRunStats {
    pub total_edges: u64,
    pub records: u64,
    pub positive_detections: u64,
    pub futile_records: u64,
    pub suppressed_edges: u64,
    pub truncated_dead_gates: u64,
    pub dead_gates_per_click: u32,
    pub useful_percentage: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TdsimCoincidenceStats {
    pub n_edges: u64,
    pub delivered_gates: u64,
    pub n_events: u64,
    pub n_coincidences: u64,
    pub d0_only: u64,
    pub d1_only: u64,
    pub coincidence_fraction: f64,
    pub coincidence_per_gate: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TdsimVerdict {
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TdsimRandomness {
    pub monobit: TdsimVerdict,
    pub runs: TdsimVerdict,
    pub block_frequency: TdsimVerdict,
    pub serial_lag1: TdsimVerdict,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TdsimKeyReport {
    pub key_length: u64,
    pub condition_violated: bool,
    pub run_count: u64,
    pub anticorrelation_violations: u64,
    pub eve_known_fraction: f64,
    /// False when the key is too short for the battery; `randomness` is then zeroed.
    pub randomness_valid: bool,
    pub randomness: TdsimRandomness,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(TdsimStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(TdsimStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TdsimStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TdsimStatus::InvalidArgument, msg.into())
}

/// Clears the last error, runs `f` with panics contained, records any failure.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TdsimStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TdsimStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            TdsimStatus::Panic
        }
    }
}

unsafe fn to_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn mode_selection(mode: TdsimMode) -> ModeSelection {
    match mode {
        TdsimMode::Both => ModeSelection::Both,
        TdsimMode::On => ModeSelection::On,
        TdsimMode::Off => ModeSelection::Off,
    }
}

/// Message of the most recent failure on this thread, or null. Valid until the
/// next `tdsim_*` call on the same thread.
#[no_mangle]
pub extern "C" fn tdsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static version string.
#[no_mangle]
pub extern "C" fn tdsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_scenario_load(path: *const c_char, out_scenario: *mut *mut TdsimScenario) -> TdsimStatus {
    guard(|| {
        let slot = out(out_scenario, "out_scenario")?;
        *slot = ptr::null_mut();
        let loaded = scenario::load_scenario(Path::new(to_str(path, "path")?))?;
        *slot = Box::into_raw(Box::new(TdsimScenario::new(loaded)));
        Ok(())
    })
}

/// Parses scenario text. `origin` labels error positions and may be null.
///
/// # Safety
/// `text` and non-null `origin` must be NUL-terminated strings, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_scenario_parse(
    text: *const c_char,
    origin: *const c_char,
    out_scenario: *mut *mut TdsimScenario,
) -> TdsimStatus {
    guard(|| {
        let slot = out(out_scenario, "out_scenario")?;
        *slot = ptr::null_mut();
        let text = to_str(text, "text")?;
        let origin = if origin.is_null() { "<memory>" } else { to_str(origin, "origin")? };
        let loaded = scenario::parse_scenario(text, Path::new(origin))?;
        *slot = Box::into_raw(Box::new(TdsimScenario::new(loaded)));
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from `tdsim_scenario_load`/`_parse` or be null.
#[no_mangle]
pub unsafe extern "C" fn tdsim_scenario_free(scenario: *mut TdsimScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tdsim_scenario_advisory_count(scenario: *const TdsimScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.loaded.advisories.len())
}

/// Code of advisory `index` (e.g. `feedback_too_slow`), or null when out of range.
/// Valid while the scenario handle lives.
///
/// # Safety
/// `scenario` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tdsim_scenario_advisory_code(scenario: *const TdsimScenario, index: usize) -> *const c_char {
    scenario
        .as_ref()
        .and_then(|s| s.codes.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Human-readable text of advisory `index`, or null when out of range.
///
/// # Safety
/// `scenario` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tdsim_scenario_advisory_message(scenario: *const TdsimScenario, index: usize) -> *const c_char {
    scenario
        .as_ref()
        .and_then(|s| s.messages.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// # Safety
/// `scenario` must be a live handle, `out_seed` writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_scenario_seed(scenario: *const TdsimScenario, out_seed: *mut u64) -> TdsimStatus {
    guard(|| {
        *out(out_seed, "out_seed")? = handle(scenario, "scenario")?.loaded.scenario.seed;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tdsim_scenario_set_seed(scenario: *mut TdsimScenario, seed: u64) -> TdsimStatus {
    guard(|| {
        out(scenario, "scenario")?.loaded.scenario.seed = seed;
        Ok(())
    })
}

/// Runs the scenario's analyses and writes the full artifact set into `out_dir`.
///
/// # Safety
/// `scenario` must be a live handle, `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tdsim_run_scenario(
    scenario: *const TdsimScenario,
    out_dir: *const c_char,
    mode: TdsimMode,
) -> TdsimStatus {
    guard(|| {
        let s = &handle(scenario, "scenario")?.loaded.scenario;
        let opts = RunOptions {
            modes: mode_selection(mode),
            ..RunOptions::default()
        };
        cli::run_scenario(s, Path::new(to_str(out_dir, "out_dir")?), &opts)?;
        Ok(())
    })
}

/// Block acquisition with the first detector of the scenario.
///
/// # Safety
/// `scenario` must be a live handle, `out_result` writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_run_single(
    scenario: *const TdsimScenario,
    feedback_enabled: bool,
    out_result: *mut *mut TdsimSingleResult,
) -> TdsimStatus {
    guard(|| {
        let slot = out(out_result, "out_result")?;
        *slot = ptr::null_mut();
        let s = &handle(scenario, "scenario")?.loaded.scenario;
        if s.detectors.is_empty() || s.n_blocks == 0 {
            return Err(invalid("scenario needs a detector and n_blocks >= 1"));
        }
        let plan = BlockPlan {
            n_blocks: s.n_blocks,
            block_capacity: s.block_capacity,
            keep_records: false,
            trace_cycles: 0,
        };
        let fb = s.feedback.with_enabled(feedback_enabled);
        let run = run_single(&s.source, &s.detectors[0], &fb, &plan, SeedPlan::single(s.seed))?;
        *slot = Box::into_raw(Box::new(TdsimSingleResult(run)));
        Ok(())
    })
}

/// # Safety
/// `result` must come from `tdsim_run_single` or be null.
#[no_mangle]
pub unsafe extern "C" fn tdsim_single_free(result: *mut TdsimSingleResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `result` must be a live handle, `out_stats` writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_single_stats(result: *const TdsimSingleResult, out_stats: *mut TdsimRunStats) -> TdsimStatus {
    guard(|| {
        let st = &handle(result, "result")?.0.stats;
        *out(out_stats, "out_stats")? = TdsimRunStats {
            total_edges: st.total_edges,
            records: st.records,
            positive_detections: st.positive_detections,
            futile_records: st.futile_records,
            suppressed_edges: st.suppressed_edges,
            truncated_dead_gates: st.truncated_dead_gates,
            dead_gates_per_click: st.dead_gates_per_click,
            useful_percentage: st.useful_percentage,
        };
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tdsim_single_block_count(result: *const TdsimSingleResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.blocks.len())
}

/// # Safety
/// `result` must be a live handle, `out_pct` writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_single_block_useful_percentage(
    result: *const TdsimSingleResult,
    index: usize,
    out_pct: *mut f64,
) -> TdsimStatus {
    guard(|| {
        let r = handle(result, "result")?;
        let block = r.0.blocks.get(index).ok_or_else(|| invalid(format!("block index {index} out of range")))?;
        *out(out_pct, "out_pct")? = block.useful_percentage();
        Ok(())
    })
}

/// Two-detector run sharing one disabling loop.
///
/// # Safety
/// `scenario` must be a live handle, `out_result` writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_run_dual(
    scenario: *const TdsimScenario,
    feedback_enabled: bool,
    out_result: *mut *mut TdsimDualResult,
) -> TdsimStatus {
    guard(|| {
        let slot = out(out_result, "out_result")?;
        *slot = ptr::null_mut();
        let s = &handle(scenario, "scenario")?.loaded.scenario;
        if s.detectors.len() != 2 || s.n_edges == 0 {
            return Err(invalid("scenario needs two detectors and n_edges >= 1"));
        }
        let run = run_dual(
            &s.source,
            [&s.detectors[0], &s.detectors[1]],
            &s.feedback.with_enabled(feedback_enabled),
            s.n_edges,
            SeedPlan::single(s.seed),
            0,
        )?;
        *slot = Box::into_raw(Box::new(TdsimDualResult(run)));
        Ok(())
    })
}

/// # Safety
/// `result` must come from `tdsim_run_dual` or be null.
#[no_mangle]
pub unsafe extern "C" fn tdsim_dual_free(result: *mut TdsimDualResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `result` must be a live handle, `out_stats` writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_dual_coincidence(
    result: *const TdsimDualResult,
    out_stats: *mut TdsimCoincidenceStats,
) -> TdsimStatus {
    guard(|| {
        let c = &handle(result, "result")?.0.coincidence;
        *out(out_stats, "out_stats")? = TdsimCoincidenceStats {
            n_edges: c.n_edges,
            delivered_gates: c.delivered_gates,
            n_events: c.n_events,
            n_coincidences: c.n_coincidences,
            d0_only: c.d0_only,
            d1_only: c.d1_only,
            coincidence_fraction: c.coincidence_fraction,
            coincidence_per_gate: c.coincidence_per_gate,
        };
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tdsim_dual_key_length(result: *const TdsimDualResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.key.len())
}

/// Copies up to `capacity` key bits (0 or 1 per byte); the count copied goes to
/// `out_written`.
///
/// # Safety
/// `buf` must hold `capacity` bytes, `out_written` writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_dual_key_bits(
    result: *const TdsimDualResult,
    buf: *mut u8,
    capacity: usize,
    out_written: *mut usize,
) -> TdsimStatus {
    guard(|| {
        let bits = handle(result, "result")?.0.key.bits();
        let written = out(out_written, "out_written")?;
        let n = bits.len().min(capacity);
        if n > 0 {
            if buf.is_null() {
                return Err(null("buf"));
            }
            ptr::copy_nonoverlapping(bits.as_ptr(), buf, n);
        }
        *written = n;
        Ok(())
    })
}

/// Dead-time runs, passive leakage and randomness battery for the sifted key,
/// using the scenario's dead time, trigger rate, disclosure fraction and seed.
///
/// # Safety
/// Handles must be live, `out_report` writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_dual_analyze(
    result: *const TdsimDualResult,
    scenario: *const TdsimScenario,
    out_report: *mut TdsimKeyReport,
) -> TdsimStatus {
    guard(|| {
        let key = &handle(result, "result")?.0.key;
        let s = &handle(scenario, "scenario")?.loaded.scenario;
        let cfg = AnalysisConfig {
            dead_time: s.key_dead_time(),
            trigger_rate: s.source.trigger_rate,
            ec_reveal_fraction: s.ec_reveal_fraction,
            seed: SeedPlan::single(s.seed).detectors,
        };
        let r = security::analyze_key(key, &cfg)?;
        let battery = &r.randomness_verdicts;
        let v = |name: &str| battery.get(name).map(verdict).unwrap_or_default();
        *out(out_report, "out_report")? = TdsimKeyReport {
            key_length: key.len() as u64,
            condition_violated: r.condition_violated,
            run_count: r.runs.len() as u64,
            anticorrelation_violations: r.anticorrelation_violations as u64,
            eve_known_fraction: r.eve_known_fraction,
            randomness_valid: !battery.is_empty(),
            randomness: TdsimRandomness {
                monobit: v(randomness::MONOBIT),
                runs: v(randomness::RUNS),
                block_frequency: v(randomness::BLOCK_FREQUENCY),
                serial_lag1: v(randomness::SERIAL_LAG1),
            },
        };
        Ok(())
    })
}

fn verdict(v: &randomness::TestVerdict) -> TdsimVerdict {
    TdsimVerdict {
        statistic: v.statistic,
        p_value: v.p_value,
        pass: v.pass,
    }
}

/// Probability that a pulse of mean photon number `mu` triggers a detector of efficiency `eta`.
///
/// # Safety
/// `out_p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_detection_probability(mu: f64, eta: f64, out_p: *mut f64) -> TdsimStatus {
    guard(|| {
        *out(out_p, "out_p")? = spad::detection_probability(mu, eta)?;
        Ok(())
    })
}

/// # Safety
/// `out_pct` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_useful_percentage(n_total: u64, k: u64, m: u64, out_pct: *mut f64) -> TdsimStatus {
    guard(|| {
        *out(out_pct, "out_pct")? = acquisition::useful_percentage(n_total, k, m)?;
        Ok(())
    })
}

/// # Safety
/// `out_violated` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_check_self_blinding(dead_time: f64, trigger_rate: f64, out_violated: *mut bool) -> TdsimStatus {
    guard(|| {
        *out(out_violated, "out_violated")? = security::check_self_blinding(dead_time, trigger_rate)?;
        Ok(())
    })
}

/// Response time of the disabling loop from its three delays, in seconds.
///
/// # Safety
/// `out_tau` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_total_response_time(
    spad_latency: f64,
    cable_delay: f64,
    fpga_delay: f64,
    out_tau: *mut f64,
) -> TdsimStatus {
    guard(|| {
        let delays = [spad_latency, cable_delay, fpga_delay];
        if delays.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(invalid("delays must be finite and non-negative"));
        }
        let spad = spad::SpadConfig {
            response_latency: spad_latency,
            ..spad::SpadConfig::default()
        };
        let fb = clock_manager::FeedbackConfig {
            cable_delay,
            fpga_delay,
            ..clock_manager::FeedbackConfig::default()
        };
        *out(out_tau, "out_tau")? = clock_manager::total_response_time(&spad, &fb);
        Ok(())
    })
}

/// # Safety
/// `out_rate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_max_disabling_rate(tau_resp: f64, out_rate: *mut f64) -> TdsimStatus {
    guard(|| {
        *out(out_rate, "out_rate")? = clock_manager::max_disabling_rate(tau_resp)?;
        Ok(())
    })
}

/// Runs the four-test battery on `len` bits (one 0/1 value per byte).
///
/// # Safety
/// `bits` must point to `len` readable bytes, `out_result` writable.
#[no_mangle]
pub unsafe extern "C" fn tdsim_randomness_battery(
    bits: *const u8,
    len: usize,
    out_result: *mut TdsimRandomness,
) -> TdsimStatus {
    guard(|| {
        if bits.is_null() {
            return Err(null("bits"));
        }
        let bits = std::slice::from_raw_parts(bits, len);
        if bits.iter().any(|&b| b > 1) {
            return Err(invalid("bits must be 0 or 1"));
        }
        let b = randomness::randomness_battery(bits)?;
        *out(out_result, "out_result")? = TdsimRandomness {
            monobit: verdict(&b[randomness::MONOBIT]),
            runs: verdict(&b[randomness::RUNS]),
            block_frequency: verdict(&b[randomness::BLOCK_FREQUENCY]),
            serial_lag1: verdict(&b[randomness::SERIAL_LAG1]),
        };
        Ok(())
    })
}
