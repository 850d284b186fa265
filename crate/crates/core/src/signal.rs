//! Single-level discrete wavelet decomposition and reconstruction used to split
//! return series into low- and high-frequency components.
//!
//! Decomposition uses periodic boundary extension. Series of odd length are
//! padded by repeating their final value, so candidates have `ceil(T / 2)`
//! entries and the transposed (upsampling) operator returns exactly `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletFilterPair {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Default for WaveletFilterPair {
    fn default() -> Self {
        Self::haar()
    }
}

impl WaveletFilterPair {
    pub fn haar() -> Self {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        WaveletFilterPair {
            low: vec![c, c],
            high: vec![c, -c],
        }
    }

    /// Daubechies-2 (four taps).
    pub fn db2() -> Self {
        let s3 = 3f64.sqrt();
        let d = 4.0 * std::f64::consts::SQRT_2;
        Self::from_low_pass(vec![
            (1.0 + s3) / d,
            (3.0 + s3) / d,
            (3.0 - s3) / d,
            (1.0 - s3) / d,
        ])
        .expect("db2 taps are valid")
    }

    /// Builds the quadrature-mirror high-pass `h[k] = (-1)^k g[L-1-k]`.
    pub fn from_low_pass(low: Vec<f64>) -> Result<Self> {
        let l = low.len();
        let high = (0..l)
            .map(|k| {
                if k % 2 == 0 {
                    low[l - 1 - k]
                } else {
                    -low[l - 1 - k]
                }
            })
            .collect();
        Self::new(low, high)
    }

    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.is_empty() || low.len() != high.len() {
            return Err(Error::arg(format!(
                "filter taps must be non-empty and equal length (got {} and {})",
                low.len(),
                high.len()
            )));
        }
        if low.iter().chain(&high).any(|x| !x.is_finite()) {
            return Err(Error::arg("filter taps must be finite"));
        }
        Ok(WaveletFilterPair { low, high })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(Self::haar()),
            "db2" => Ok(Self::db2()),
            other => Err(Error::Config(format!("unknown wavelet {other:?}"))),
        }
    }

    /// `Σg² = Σh² = 1` and `Σ g·h = 0` within `tol`.
    pub fn is_orthogonal(&self, tol: f64) -> bool {
        let gg: f64 = self.low.iter().map(|x| x * x).sum();
        let hh: f64 = self.high.iter().map(|x| x * x).sum();
        let gh: f64 = self.low.iter().zip(&self.high).map(|(a, b)| a * b).sum();
        (gg - 1.0).abs() <= tol && (hh - 1.0).abs() <= tol && gh.abs() <= tol
    }
}

fn padded(series: &[f64]) -> Vec<f64> {
    let mut v = series.to_vec();
    if v.len() % 2 == 1 {
        v.push(*series.last().expect("non-empty"));
    }
    v
}

fn analyse(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let t = x.len();
    (0..t / 2)
        .map(|k| {
            taps.iter()
                .enumerate()
                .map(|(m, g)| g * x[(2 * k + m) % t])
                .sum()
        })
        .collect()
}

/// Splits a series into its half-length low- and high-pass candidates.
pub fn dwt_decompose(series: &[f64], filters: &WaveletFilterPair) -> Result<(Vec<f64>, Vec<f64>)> {
    if series.is_empty() {
        return Err(Error::arg("cannot decompose an empty series"));
    }
    if series.len() < 2 {
        return Err(Error::arg(
            "wavelet decomposition needs at least two samples",
        ));
    }
    let x = padded(series);
    Ok((analyse(&x, &filters.low), analyse(&x, &filters.high)))
}

/// Applies the transposed analysis operator, returning a series of
/// `original_len` samples.
pub fn upsample(candidate: &[f64], taps: &[f64], original_len: usize) -> Result<Vec<f64>> {
    if candidate.len() != original_len.div_ceil(2) || original_len == 0 {
        return Err(Error::arg(format!(
            "candidate of length {} cannot come from a series of length {original_len}",
            candidate.len()
        )));
    }
    let t = 2 * candidate.len();
    let mut y = vec![0.0; t];
    for (k, c) in candidate.iter().enumerate() {
        for (m, g) in taps.iter().enumerate() {
            y[(2 * k + m) % t] += g * c;
        }
    }
    y.truncate(original_len);
    Ok(y)
}

/// Per-stock low/high components of a T × N return table (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyComponents {
    pub n_dates: usize,
    pub n_symbols: usize,
    /// T × N
    pub low: Vec<f64>,
    /// T × N
    pub high: Vec<f64>,
    /// ceil(T/2) × N
    pub candidate_low: Vec<f64>,
    /// ceil(T/2) × N
    pub candidate_high: Vec<f64>,
}

/// Decomposes every column of a row-major T × N table independently and
/// upsamples both branches back to length T.
pub fn decouple_returns(
    returns: &[f64],
    n_symbols: usize,
    filters: &WaveletFilterPair,
) -> Result<FrequencyComponents> {
    if n_symbols == 0 || !returns.len().is_multiple_of(n_symbols) {
        return Err(Error::arg(format!(
            "return table of {} values is not a multiple of {n_symbols} columns",
            returns.len()
        )));
    }
    let t_len = returns.len() / n_symbols;
    if let Some(i) = returns.iter().position(|r| !r.is_finite()) {
        return Err(Error::arg(format!(
            "missing return at (t={}, n={})",
            i / n_symbols,
            i % n_symbols
        )));
    }
    let half = t_len.div_ceil(2);
    let mut out = FrequencyComponents {
        n_dates: t_len,
        n_symbols,
        low: vec![0.0; t_len * n_symbols],
        high: vec![0.0; t_len * n_symbols],
        candidate_low: vec![0.0; half * n_symbols],
        candidate_high: vec![0.0; half * n_symbols],
    };
    for n in 0..n_symbols {
        let col: Vec<f64> = (0..t_len).map(|t| returns[t * n_symbols + n]).collect();
        let (cl, ch) = dwt_decompose(&col, filters)?;
        let lo = upsample(&cl, &filters.low, t_len)?;
        let hi = upsample(&ch, &filters.high, t_len)?;
        for t in 0..t_len {
            out.low[t * n_symbols + n] = lo[t];
            out.high[t * n_symbols + n] = hi[t];
        }
        for k in 0..half {
            out.candidate_low[k * n_symbols + n] = cl[k];
            out.candidate_high[k * n_symbols + n] = ch[k];
        }
    }
    Ok(out)
}
