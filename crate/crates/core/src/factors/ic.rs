use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{is_label_channel, FactorPanel};
use crate::data::ReturnMatrix;
use crate::error::{Error, Result};
use crate::stats;

/// Default screening threshold on mean RankIC.
pub const IC_THRESHOLD: f64 = 0.02;
const MIN_STOCKS: usize = 3;

/// Daily RankIC summary for one factor; percentages are in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorIc {
    pub factor: String,
    pub mean_ic: f64,
    pub ic_std: f64,
    pub pct_positive: f64,
    pub pct_abs_gt_002: f64,
    pub n_days: usize,
    pub effective: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcReport {
    pub threshold: f64,
    pub factors: Vec<FactorIc>,
}

impl IcReport {
    pub fn effective_factors(&self) -> Vec<String> {
        self.factors
            .iter()
            .filter(|f| f.effective)
            .map(|f| f.factor.clone())
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for f in &self.factors {
            w.serialize(f)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shifts returns back one date so row `t` holds the return over `t → t+1`.
/// The last row becomes missing.
pub fn forward_returns(returns: &ReturnMatrix) -> ReturnMatrix {
    let n = returns.n_symbols();
    let mut values = returns.values[n.min(returns.values.len())..].to_vec();
    values.extend(std::iter::repeat_n(f64::NAN, n.min(returns.values.len())));
    ReturnMatrix::from_values(returns.dates.clone(), returns.symbols.clone(), values)
}

fn summarize(name: &str, daily: &[f64], threshold: f64) -> FactorIc {
    let n = daily.len();
    let pct = |k: usize| {
        if n == 0 {
            f64::NAN
        } else {
            100.0 * k as f64 / n as f64
        }
    };
    let mean_ic = stats::mean(daily);
    FactorIc {
        factor: name.to_string(),
        mean_ic,
        ic_std: stats::std_sample(daily),
        pct_positive: pct(daily.iter().filter(|v| **v > 0.0).count()),
        pct_abs_gt_002: pct(daily.iter().filter(|v| v.abs() > 0.02).count()),
        n_days: n,
        effective: mean_ic >= threshold,
    }
}

/// Cross-sectional Spearman IC of every factor channel against
/// `forward_returns` (same dates and symbols, row `t` = return over
/// `t → t+1`). Dates with fewer than three paired values, or a constant side,
/// are skipped.
pub fn ic_analysis(
    factors: &FactorPanel,
    forward_returns: &ReturnMatrix,
    threshold: f64,
) -> Result<IcReport> {
    if factors.dates != forward_returns.dates {
        let missing = factors
            .dates
            .iter()
            .filter(|d| !forward_returns.dates.contains(d))
            .copied()
            .collect();
        return Err(Error::Alignment(missing));
    }
    if factors.symbols != forward_returns.symbols {
        return Err(Error::arg("factor and return symbols differ"));
    }
    let (nt, nn) = (factors.n_dates(), factors.n_symbols());
    let report: Vec<FactorIc> = (0..factors.n_channels())
        .into_par_iter()
        .filter(|&f| !is_label_channel(&factors.channels[f]))
        .map(|f| {
            let daily: Vec<f64> = (0..nt)
                .filter_map(|t| {
                    let x: Vec<f64> = (0..nn).map(|n| factors.get(t, n, f)).collect();
                    let (x, y) = stats::finite_pairs(&x, forward_returns.row(t));
                    if x.len() < MIN_STOCKS {
                        return None;
                    }
                    stats::spearman(&x, &y)
                })
                .collect();
            summarize(&factors.channels[f], &daily, threshold)
        })
        .collect();
    Ok(IcReport {
        threshold,
        factors: report,
    })
}
