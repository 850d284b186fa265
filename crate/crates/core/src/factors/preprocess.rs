use rayon::prelude::*;

use super::{is_label_channel, FactorPanel};
use crate::stats;

const SIGMA_LIMIT: f64 = 3.0;
const MAX_SWEEPS: usize = 64;

/// Cleaned panel plus the names of channels dropped for having no data.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub panel: FactorPanel,
    pub dropped: Vec<String>,
}

fn cross_section(column: &[f64], t: usize, nn: usize) -> &[f64] {
    &column[t * nn..(t + 1) * nn]
}

fn moments(row: &[f64]) -> Option<(f64, f64)> {
    let present: Vec<f64> = row.iter().copied().filter(|v| !v.is_nan()).collect();
    if present.is_empty() {
        return None;
    }
    Some((stats::mean(&present), stats::std_pop(&present)))
}

fn is_outlier(v: f64, mean: f64, std: f64) -> bool {
    (v - mean).abs() > SIGMA_LIMIT * std
}

/// Forward fill then 3σ replacement for one channel, walking dates in order.
///
/// A flagged value takes the stock's cleaned prior-day value; if that is
/// itself out of band (or absent) it takes the mean of the in-band values.
/// Each date is swept until no value lies outside the band.
fn clean_channel(column: &mut [f64], nt: usize, nn: usize) {
    for t in 0..nt {
        if t > 0 {
            for n in 0..nn {
                if column[t * nn + n].is_nan() {
                    column[t * nn + n] = column[(t - 1) * nn + n];
                }
            }
        }
        for _ in 0..MAX_SWEEPS {
            let row = cross_section(column, t, nn);
            let Some((mean, std)) = moments(row) else {
                break;
            };
            let flagged: Vec<usize> = (0..nn)
                .filter(|&n| !row[n].is_nan() && is_outlier(row[n], mean, std))
                .collect();
            if flagged.is_empty() {
                break;
            }
            let inband: Vec<f64> = row
                .iter()
                .copied()
                .filter(|v| !v.is_nan() && !is_outlier(*v, mean, std))
                .collect();
            let inband_mean = stats::mean(&inband);
            for n in flagged {
                let prior = if t > 0 {
                    column[(t - 1) * nn + n]
                } else {
                    f64::NAN
                };
                column[t * nn + n] = if prior.is_nan() || is_outlier(prior, mean, std) {
                    inband_mean
                } else {
                    prior
                };
            }
        }
    }
}

/// Per-date z-score over present values; a constant date becomes zeros.
fn zscore_channel(column: &mut [f64], nt: usize, nn: usize) {
    for t in 0..nt {
        let row = &mut column[t * nn..(t + 1) * nn];
        let Some((mean, std)) = moments(row) else {
            continue;
        };
        for v in row.iter_mut().filter(|v| !v.is_nan()) {
            *v = if std > 0.0 { (*v - mean) / std } else { 0.0 };
        }
    }
}

pub(crate) fn zscore_panel(panel: &mut FactorPanel) {
    let (nt, nn) = (panel.n_dates(), panel.n_symbols());
    let cols: Vec<(usize, Vec<f64>)> = (0..panel.n_channels())
        .into_par_iter()
        .filter(|&f| !is_label_channel(&panel.channels[f]))
        .map(|f| {
            let mut col = panel.channel(f);
            zscore_channel(&mut col, nt, nn);
            (f, col)
        })
        .collect();
    for (f, col) in cols {
        panel.set_channel(f, &col);
    }
}

/// Fill, remove 3σ outliers and standardize each factor channel per date.
/// `return` and `trend` channels pass through untouched. Channels with no
/// value anywhere are dropped.
pub fn preprocess(raw: &FactorPanel) -> Preprocessed {
    let (nt, nn) = (raw.n_dates(), raw.n_symbols());
    let cleaned: Vec<Option<Vec<f64>>> = (0..raw.n_channels())
        .into_par_iter()
        .map(|f| {
            let mut col = raw.channel(f);
            if is_label_channel(&raw.channels[f]) {
                return Some(col);
            }
            clean_channel(&mut col, nt, nn);
            if col.iter().all(|v| v.is_nan()) {
                return None;
            }
            zscore_channel(&mut col, nt, nn);
            Some(col)
        })
        .collect();

    let mut dropped = Vec::new();
    let mut keep = Vec::new();
    for (f, c) in cleaned.iter().enumerate() {
        match c {
            Some(_) => keep.push(f),
            None => {
                log::warn!("dropping factor channel {} with no data", raw.channels[f]);
                dropped.push(raw.channels[f].clone());
            }
        }
    }
    let rows = nt * nn;
    let mut values = Vec::with_capacity(rows * keep.len());
    for r in 0..rows {
        values.extend(keep.iter().map(|&f| cleaned[f].as_ref().expect("kept")[r]));
    }
    let panel = FactorPanel {
        dates: raw.dates.clone(),
        symbols: raw.symbols.clone(),
        channels: keep.iter().map(|&f| raw.channels[f].clone()).collect(),
        values,
    };
    Preprocessed { panel, dropped }
}
