use std::ops::Range;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::factors::{FactorPanel, RETURN_CHANNEL, TREND_CHANNEL};
use crate::graphs::{slot_node, trading_slot_indices};
use crate::signal::{decouple_returns, WaveletFilterPair};
use crate::tensor::Tensor;

/// One training or inference sample. Target tables are `T2 × N` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `[T1, N, C]` with channels `[return, trend, factors...]`.
    pub input: Tensor,
    /// Temporal graph node of each input date.
    pub slots: Vec<usize>,
    pub input_dates: Vec<NaiveDate>,
    pub target_dates: Vec<NaiveDate>,
    pub y: Vec<f64>,
    pub y_low: Vec<f64>,
    pub labels: Vec<f64>,
    pub low_labels: Vec<f64>,
}

impl Window {
    pub fn t1(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn n_stocks(&self) -> usize {
        self.input.shape()[1]
    }

    pub fn n_channels(&self) -> usize {
        self.input.shape()[2]
    }
}

/// Low branch of the wavelet split of the joint input-and-target return
/// series (`(T1 + T2) × N`, row-major), restricted to the last `t2` rows.
pub fn low_frequency_targets(
    joint: &[f64],
    n_stocks: usize,
    t2: usize,
    filters: &WaveletFilterPair,
) -> Result<Vec<f64>> {
    let comps = decouple_returns(joint, n_stocks, filters)?;
    let total = comps.n_dates;
    if t2 > total {
        return Err(Error::arg("target horizon longer than the joint series"));
    }
    Ok(comps.low[(total - t2) * n_stocks..].to_vec())
}

/// Splits the return channel of a `[T1, N, C]` window into wavelet branches,
/// giving the low and high branch inputs with the other channels unchanged.
/// With `raw` set, both branches receive the window as is.
pub fn decouple_window(
    input: &Tensor,
    filters: &WaveletFilterPair,
    raw: bool,
) -> Result<(Tensor, Tensor)> {
    let shape = input.shape();
    if shape.len() != 3 || shape[2] < 1 {
        return Err(Error::shape("decouple_window", shape, &[0, 0, 1]));
    }
    let (t1, n, c) = (shape[0], shape[1], shape[2]);
    let returns: Vec<f64> = (0..t1 * n).map(|i| input.data()[i * c]).collect();
    if let Some(i) = returns.iter().position(|r| !r.is_finite()) {
        return Err(Error::arg(format!(
            "missing return in window at (t={}, n={})",
            i / n,
            i % n
        )));
    }
    if raw {
        return Ok((input.clone(), input.clone()));
    }
    let comps = decouple_returns(&returns, n, filters)?;
    let mut low = input.clone();
    let mut high = input.clone();
    for i in 0..t1 * n {
        low.data_mut()[i * c] = comps.low[i];
        high.data_mut()[i * c] = comps.high[i];
    }
    Ok((low, high))
}

fn check_channels(panel: &FactorPanel) -> Result<()> {
    if panel.channels.first().map(String::as_str) != Some(RETURN_CHANNEL)
        || panel.channels.get(1).map(String::as_str) != Some(TREND_CHANNEL)
    {
        return Err(Error::arg(format!(
            "model input must start with the {RETURN_CHANNEL} and {TREND_CHANNEL} channels"
        )));
    }
    Ok(())
}

/// Windows whose first target date index lies in `starts`. Windows touching a
/// missing return (input or target) are skipped; missing factor values are
/// set to 0.
pub fn build_windows(
    panel: &FactorPanel,
    filters: &WaveletFilterPair,
    t1: usize,
    t2: usize,
    starts: Range<usize>,
) -> Result<Vec<Window>> {
    check_channels(panel)?;
    let (nt, n, c) = (panel.n_dates(), panel.n_symbols(), panel.n_channels());
    let slots: Vec<usize> = trading_slot_indices(&panel.dates)
        .into_iter()
        .map(slot_node)
        .collect();
    let lo = starts.start.max(t1);
    let hi = starts.end.min((nt + 1).saturating_sub(t2));
    let mut out = Vec::new();
    for s in lo..hi {
        let joint: Vec<f64> = ((s - t1)..(s + t2))
            .flat_map(|t| (0..n).map(move |j| (t, j)))
            .map(|(t, j)| panel.get(t, j, 0))
            .collect();
        if joint.iter().any(|r| !r.is_finite()) {
            continue;
        }
        let row = n * c;
        let mut input = panel.values[(s - t1) * row..s * row].to_vec();
        for v in input.iter_mut().filter(|v| v.is_nan()) {
            *v = 0.0;
        }
        let y = joint[t1 * n..].to_vec();
        let y_low = low_frequency_targets(&joint, n, t2, filters)?;
        let labels = (s..s + t2)
            .flat_map(|t| (0..n).map(move |j| (t, j)))
            .map(|(t, j)| panel.get(t, j, 1))
            .collect();
        let low_labels = y_low
            .iter()
            .map(|v| f64::from(u8::from(*v > 0.0)))
            .collect();
        out.push(Window {
            input: Tensor::new(vec![t1, n, c], input)?,
            slots: slots[s - t1..s].to_vec(),
            input_dates: panel.dates[s - t1..s].to_vec(),
            target_dates: panel.dates[s..s + t2].to_vec(),
            y,
            y_low,
            labels,
            low_labels,
        });
    }
    Ok(out)
}

/// Windows whose targets fall entirely inside the date range `range`.
pub fn windows_for_range(
    panel: &FactorPanel,
    filters: &WaveletFilterPair,
    t1: usize,
    t2: usize,
    range: Range<usize>,
) -> Result<Vec<Window>> {
    let end = (range.end + 1).saturating_sub(t2);
    build_windows(panel, filters, t1, t2, range.start..end)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_returns_have_empty_high_branch() {
        let input =
            Tensor::new(vec![4, 1, 2], vec![0.3, 1.0, 0.3, 1.0, 0.3, 1.0, 0.3, 1.0]).unwrap();
        let (low, high) = decouple_window(&input, &WaveletFilterPair::haar(), false).unwrap();
        for t in 0..4 {
            assert!(high.data()[t * 2].abs() < 1e-15);
            assert!((low.data()[t * 2] - 0.3).abs() < 1e-15);
            assert_eq!(high.data()[t * 2 + 1], 1.0);
        }
        let (l2, h2) = decouple_window(&input, &WaveletFilterPair::haar(), true).unwrap();
        assert_eq!((&l2, &h2), (&input, &input));
    }

    #[test]
    fn missing_return_rejected() {
        let input = Tensor::new(vec![2, 1, 1], vec![0.1, f64::NAN]).unwrap();
        let err = decouple_window(&input, &WaveletFilterPair::haar(), false).unwrap_err();
        assert!(err.to_string().contains("t=1"));
    }
}
