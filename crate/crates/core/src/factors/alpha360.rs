use std::fmt;

use super::FactorPanel;
use crate::data::{Ohlcv, PanelDataset};

/// Number of lags per base series; a date needs `LOOKBACK - 1` prior days.
pub const LOOKBACK: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FactorCategory {
    Close,
    Open,
    High,
    Low,
    Vwap,
    Volume,
}

impl FactorCategory {
    pub const ALL: [FactorCategory; 6] = [
        FactorCategory::Close,
        FactorCategory::Open,
        FactorCategory::High,
        FactorCategory::Low,
        FactorCategory::Vwap,
        FactorCategory::Volume,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FactorCategory::Close => "CLOSE",
            FactorCategory::Open => "OPEN",
            FactorCategory::High => "HIGH",
            FactorCategory::Low => "LOW",
            FactorCategory::Vwap => "VWAP",
            FactorCategory::Volume => "VOLUME",
        }
    }

    fn read(self, bar: &Ohlcv) -> f64 {
        match self {
            FactorCategory::Close => bar.close,
            FactorCategory::Open => bar.open,
            FactorCategory::High => bar.high,
            FactorCategory::Low => bar.low,
            FactorCategory::Vwap => bar.vwap,
            FactorCategory::Volume => bar.volume,
        }
    }
}

/// `Ref(series, lag) / close` for prices, `Ref(volume, lag) / (volume + 1e-12)`
/// for volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactorDefinition {
    pub category: FactorCategory,
    pub lag: usize,
}

impl FactorDefinition {
    /// All 360 definitions, category-major.
    pub fn all() -> Vec<FactorDefinition> {
        FactorCategory::ALL
            .iter()
            .flat_map(|&category| (0..LOOKBACK).map(move |lag| FactorDefinition { category, lag }))
            .collect()
    }

    pub fn evaluate(&self, today: &Ohlcv, lagged: &Ohlcv) -> f64 {
        match self.category {
            FactorCategory::Volume => lagged.volume / (today.volume + 1e-12),
            c => c.read(lagged) / today.close,
        }
    }
}

impl fmt::Display for FactorDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.category.label(), self.lag)
    }
}

/// The 360 lagged-ratio channels on the panel's calendar. The first
/// `LOOKBACK - 1` dates and any cell whose bar or lagged bar is absent are
/// missing.
pub fn build_alpha360(panel: &PanelDataset) -> FactorPanel {
    let defs = FactorDefinition::all();
    let (nt, nn, nf) = (panel.n_dates(), panel.n_symbols(), defs.len());
    let mut values = vec![f64::NAN; nt * nn * nf];
    for t in (LOOKBACK - 1)..nt {
        for n in 0..nn {
            let Some(today) = panel.cell(t, n) else {
                continue;
            };
            let base = (t * nn + n) * nf;
            for (f, def) in defs.iter().enumerate() {
                if let Some(lagged) = panel.cell(t - def.lag, n) {
                    values[base + f] = def.evaluate(today, lagged);
                }
            }
        }
    }
    FactorPanel {
        dates: panel.calendar().to_vec(),
        symbols: panel.symbols().to_vec(),
        channels: defs.iter().map(ToString::to_string).collect(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerates_360_named_definitions() {
        let defs = FactorDefinition::all();
        assert_eq!(defs.len(), 360);
        assert_eq!(defs[0].to_string(), "CLOSE0");
        assert_eq!(defs[359].to_string(), "VOLUME59");
    }

    #[test]
    fn ratios_by_hand() {
        let bar = |close: f64, volume: f64| Ohlcv {
            open: close,
            high: close,
            low: close,
            close,
            vwap: close,
            volume,
        };
        let close1 = FactorDefinition {
            category: FactorCategory::Close,
            lag: 1,
        };
        assert_eq!(close1.evaluate(&bar(4.0, 1.0), &bar(2.0, 1.0)), 0.5);
        let vol1 = FactorDefinition {
            category: FactorCategory::Volume,
            lag: 1,
        };
        assert_eq!(
            vol1.evaluate(&bar(4.0, 0.0), &bar(2.0, 100.0)),
            100.0 / 1e-12
        );
    }
}
