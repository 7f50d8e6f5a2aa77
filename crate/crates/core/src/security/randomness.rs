//! Four-test randomness battery for key strings.
//!
//! Each test maps a bit string to a statistic and a two-sided p-value; a test
//! passes when `p >= ALPHA`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.01;
pub const MIN_BITS: usize = 100;
pub const BLOCK_SIZE: usize = 128;

pub const MONOBIT: &str = "monobit";
pub const RUNS: &str = "runs";
pub const BLOCK_FREQUENCY: &str = "block_frequency";
pub const SERIAL_LAG1: &str = "serial_lag1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

impl TestVerdict {
    fn from_p(statistic: f64, p_value: f64) -> Self {
        TestVerdict {
            statistic,
            p_value,
            pass: p_value >= ALPHA,
        }
    }
}

fn two_sided_normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

fn spin(bit: u8) -> f64 {
    if bit == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Frequency test: the statistic is `|sum of ±1| / sqrt(n)`.
pub fn monobit(bits: &[u8]) -> TestVerdict {
    let n = bits.len() as f64;
    let sum: f64 = bits.iter().map(|&b| spin(b)).sum();
    let stat = sum.abs() / n.sqrt();
    TestVerdict::from_p(stat, two_sided_normal_p(stat))
}

/// Wald-Wolfowitz runs test; the statistic is the standardized run count.
pub fn runs(bits: &[u8]) -> TestVerdict {
    let n = bits.len() as f64;
    let ones = bits.iter().filter(|&&b| b != 0).count() as f64;
    let zeros = n - ones;
    if ones == 0.0 || zeros == 0.0 {
        return TestVerdict::from_p(f64::INFINITY, 0.0);
    }
    let observed = 1.0 + bits.windows(2).filter(|w| (w[0] != 0) != (w[1] != 0)).count() as f64;
    let product = 2.0 * ones * zeros;
    let mean = product / n + 1.0;
    let variance = product * (product - n) / (n * n * (n - 1.0));
    let z = (observed - mean) / variance.sqrt();
    TestVerdict::from_p(z, two_sided_normal_p(z))
}

/// Block frequency test with blocks of `BLOCK_SIZE` bits (one block when the
/// string is shorter); the statistic is chi-square with one degree of
/// freedom per block.
pub fn block_frequency(bits: &[u8]) -> TestVerdict {
    let m = BLOCK_SIZE.min(bits.len());
    let blocks = bits.len() / m;
    let chi2: f64 = bits
        .chunks_exact(m)
        .map(|block| {
            let pi = block.iter().filter(|&&b| b != 0).count() as f64 / m as f64;
            (pi - 0.5).powi(2)
        })
        .sum::<f64>()
        * 4.0
        * m as f64;
    let p = if chi2 == 0.0 {
        1.0
    } else {
        gamma_ur(blocks as f64 / 2.0, chi2 / 2.0)
    };
    TestVerdict::from_p(chi2, p)
}

/// Lag-1 serial correlation of the ±1 sequence, normalized to a z-score.
pub fn serial_lag1(bits: &[u8]) -> TestVerdict {
    let pairs = bits.len().saturating_sub(1) as f64;
    let c: f64 = bits.windows(2).map(|w| spin(w[0]) * spin(w[1])).sum();
    let z = c / pairs.sqrt();
    TestVerdict::from_p(z, two_sided_normal_p(z))
}

/// Runs all four tests. Strings shorter than `MIN_BITS` are rejected.
pub fn randomness_battery(bits: &[u8]) -> Result<BTreeMap<String, TestVerdict>> {
    if bits.len() < MIN_BITS {
        return Err(Error::Usage(format!(
            "randomness battery needs at least {MIN_BITS} bits, got {}",
            bits.len()
        )));
    }
    let mut out = BTreeMap::new();
    out.insert(MONOBIT.to_owned(), monobit(bits));
    out.insert(RUNS.to_owned(), runs(bits));
    out.insert(BLOCK_FREQUENCY.to_owned(), block_frequency(bits));
    out.insert(SERIAL_LAG1.to_owned(), serial_lag1(bits));
    Ok(out)
}
