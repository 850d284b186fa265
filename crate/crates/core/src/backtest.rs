//! TopK-Dropout daily rebalancing with commission and stamp duty, plus
//! net-value performance metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::stats;

pub const RETURN_YEAR_DAYS: f64 = 250.0;
pub const VOLATILITY_YEAR_DAYS: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub k: usize,
    pub n_drop: usize,
    pub fee_rate: f64,
    pub stamp_duty_before: f64,
    pub stamp_duty_after: f64,
    pub stamp_duty_switch: NaiveDate,
    pub initial_cash: f64,
    pub risk_free_rate: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            k: 5,
            n_drop: 3,
            fee_rate: 0.001,
            stamp_duty_before: 0.001,
            stamp_duty_after: 0.0005,
            stamp_duty_switch: NaiveDate::from_ymd_opt(2023, 8, 27).expect("valid date"),
            initial_cash: 1.0,
            risk_free_rate: 0.0,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_drop == 0 || self.n_drop > self.k {
            problems.push(format!(
                "n_drop must be in 1..={}, got {}",
                self.k, self.n_drop
            ));
        }
        for (name, v) in [
            ("fee_rate", self.fee_rate),
            ("stamp_duty_before", self.stamp_duty_before),
            ("stamp_duty_after", self.stamp_duty_after),
        ] {
            if !(v >= 0.0) {
                problems.push(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.initial_cash > 0.0) {
            problems.push(format!(
                "initial_cash must be positive, got {}",
                self.initial_cash
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Sell-side stamp duty in force on `date`.
    pub fn stamp_duty(&self, date: NaiveDate) -> f64 {
        if date < self.stamp_duty_switch {
            self.stamp_duty_before
        } else {
            self.stamp_duty_after
        }
    }
}

/// Model scores by signal date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub by_date: BTreeMap<NaiveDate, BTreeMap<String, f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    date: NaiveDate,
    symbol: String,
    score: f64,
}

impl ScoreTable {
    pub fn insert(&mut self, date: NaiveDate, symbol: &str, score: f64) {
        self.by_date
            .entry(date)
            .or_default()
            .insert(symbol.to_string(), score);
    }

    pub fn load_csv(path: &Path) -> Result<ScoreTable> {
        let mut table = ScoreTable::default();
        let mut r = csv::Reader::from_path(path)?;
        for (i, row) in r.deserialize::<ScoreRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })?;
            table.insert(row.date, &row.symbol, row.score);
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (date, scores) in &self.by_date {
            for (symbol, score) in scores {
                w.serialize(ScoreRow {
                    date: *date,
                    symbol: symbol.clone(),
                    score: *score,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub date: NaiveDate,
    pub symbol: String,
    pub side: Side,
    pub shares: f64,
    pub price: f64,
    pub fees: f64,
}

/// Daily portfolio state. `net_value` is total value divided by initial cash.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetValueSeries {
    pub dates: Vec<NaiveDate>,
    pub net_value: Vec<f64>,
    pub cash: Vec<f64>,
    pub positions: Vec<BTreeMap<String, f64>>,
    pub trades: Vec<Trade>,
    pub events: Vec<String>,
}

impl NetValueSeries {
    /// A bare value path with no trading detail (for benchmarks).
    pub fn from_values(dates: Vec<NaiveDate>, net_value: Vec<f64>) -> Result<NetValueSeries> {
        if dates.len() != net_value.len() {
            return Err(Error::shape(
                "NetValueSeries",
                &[dates.len()],
                &[net_value.len()],
            ));
        }
        Ok(NetValueSeries {
            cash: net_value.clone(),
            positions: vec![BTreeMap::new(); dates.len()],
            dates,
            net_value,
            ..Default::default()
        })
    }

    pub fn write_net_value_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "net_value", "cash", "holdings"])?;
        for i in 0..self.dates.len() {
            w.write_record([
                self.dates[i].to_string(),
                self.net_value[i].to_string(),
                self.cash[i].to_string(),
                self.positions[i].len().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_trades_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "symbol", "side", "shares", "price", "fees"])?;
        for t in &self.trades {
            let side = match t.side {
                Side::Buy => "buy",
                Side::Sell => "sell",
            };
            w.write_record([
                t.date.to_string(),
                t.symbol.clone(),
                side.to_string(),
                t.shares.to_string(),
                t.price.to_string(),
                t.fees.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn ranked(scores: &BTreeMap<String, f64>) -> Vec<(&str, f64)> {
    let mut v: Vec<(&str, f64)> = scores.iter().map(|(s, x)| (s.as_str(), *x)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v
}

struct Book<'a> {
    panel: &'a PanelDataset,
    cash: f64,
    shares: BTreeMap<String, f64>,
    last_close: BTreeMap<String, f64>,
}

impl Book<'_> {
    fn close(&self, t: usize, symbol: &str) -> Option<f64> {
        let n = self.panel.symbol_index(symbol)?;
        self.panel.cell(t, n).map(|b| b.close)
    }

    fn tradable(&self, t: usize, symbol: &str) -> bool {
        self.panel
            .symbol_index(symbol)
            .is_some_and(|n| self.panel.is_tradable(t, n))
    }

    fn mark(&mut self, t: usize) -> f64 {
        let mut value = self.cash;
        for (s, q) in &self.shares {
            let px = match self.close(t, s) {
                Some(p) => {
                    self.last_close.insert(s.clone(), p);
                    p
                }
                None => self.last_close[s],
            };
            value += q * px;
        }
        value
    }
}

/// Runs TopK-Dropout on `scores`. A score dated `d` trades at the close of the
/// next calendar date of `panel`. The first series point is the first signal
/// date with the whole book in cash.
///
/// Each rebalance sells the `n_drop` lowest-scored tradable holdings and buys
/// the best-scored tradable non-holdings, enough to return to `k` names; all
/// available cash is split equally across that day's buys. Unscored holdings
/// rank below every scored name.
pub fn run_topk_dropout(
    scores: &ScoreTable,
    panel: &PanelDataset,
    config: &StrategyConfig,
) -> Result<NetValueSeries> {
    config.validate()?;
    let first = *scores
        .by_date
        .keys()
        .next()
        .ok_or_else(|| Error::arg("no scores to trade on"))?;
    for (d, row) in &scores.by_date {
        if panel.date_index(*d).is_none() {
            return Err(Error::DateOutOfRange(*d));
        }
        if let Some(s) = row.keys().find(|s| panel.symbol_index(s).is_none()) {
            return Err(Error::arg(format!("scored symbol {s} is not in the panel")));
        }
    }
    let start = panel.date_index(first).expect("checked");
    let last_signal = panel
        .date_index(*scores.by_date.keys().next_back().expect("non-empty"))
        .expect("checked");
    let end = (last_signal + 1).min(panel.n_dates() - 1);

    let mut book = Book {
        panel,
        cash: config.initial_cash,
        shares: BTreeMap::new(),
        last_close: BTreeMap::new(),
    };
    let mut out = NetValueSeries::default();
    let record = |out: &mut NetValueSeries, book: &mut Book, t: usize| {
        let value = book.mark(t);
        out.dates.push(panel.calendar()[t]);
        out.net_value.push(value / config.initial_cash);
        out.cash.push(book.cash);
        out.positions.push(book.shares.clone());
    };
    record(&mut out, &mut book, start);

    for t in (start + 1)..=end {
        let date = panel.calendar()[t];
        if let Some(signal) = scores.by_date.get(&panel.calendar()[t - 1]) {
            rebalance(&mut book, &mut out, signal, t, date, config);
        }
        record(&mut out, &mut book, t);
    }
    Ok(out)
}

fn rebalance(
    book: &mut Book,
    out: &mut NetValueSeries,
    signal: &BTreeMap<String, f64>,
    t: usize,
    date: NaiveDate,
    config: &StrategyConfig,
) {
    let order = ranked(signal);
    let held: BTreeSet<String> = book.shares.keys().cloned().collect();
    let mut sell_order: Vec<(&str, f64)> = held
        .iter()
        .filter(|s| book.tradable(t, s))
        .map(|s| {
            (
                s.as_str(),
                signal.get(s).copied().unwrap_or(f64::NEG_INFINITY),
            )
        })
        .collect();
    sell_order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let candidates: Vec<&str> = order
        .iter()
        .map(|(s, _)| *s)
        .filter(|s| !held.contains(*s) && book.tradable(t, s))
        .collect();

    let refill = config.k.saturating_sub(held.len());
    let n_sell = if held.is_empty() {
        0
    } else {
        config
            .n_drop
            .min(sell_order.len())
            .min(candidates.len().saturating_sub(refill))
    };
    let n_buy = (n_sell + refill).min(candidates.len());
    if n_buy == 0 && n_sell == 0 {
        if refill > 0 || config.n_drop > 0 {
            out.events
                .push(format!("{date}: no tradable candidates, holdings carried"));
        }
        return;
    }

    let duty = config.stamp_duty(date);
    for (symbol, _) in sell_order.iter().take(n_sell) {
        let price = book.close(t, symbol).expect("tradable implies a bar");
        let qty = book.shares.remove(*symbol).expect("held");
        let gross = qty * price;
        let fees = gross * (config.fee_rate + duty);
        book.cash += gross - fees;
        out.trades.push(Trade {
            date,
            symbol: symbol.to_string(),
            side: Side::Sell,
            shares: qty,
            price,
            fees,
        });
    }
    if n_buy == 0 {
        return;
    }
    let budget = book.cash / n_buy as f64;
    for symbol in candidates.iter().take(n_buy) {
        let price = book.close(t, symbol).expect("tradable implies a bar");
        let qty = budget / (price * (1.0 + config.fee_rate));
        let fees = qty * price * config.fee_rate;
        book.cash -= qty * price + fees;
        book.shares.insert(symbol.to_string(), qty);
        book.last_close.insert(symbol.to_string(), price);
        out.trades.push(Trade {
            date,
            symbol: symbol.to_string(),
            side: Side::Buy,
            shares: qty,
            price,
            fees,
        });
    }
    if book.cash.abs() < 1e-12 * config.initial_cash {
        book.cash = 0.0;
    }
}

/// `(1 + R)^(250 / days) − 1` with `R = last / first − 1`.
pub fn annualized_return(net_values: &[f64], trading_days: usize) -> Result<f64> {
    if net_values.len() < 2 {
        return Err(Error::arg("annualized return needs at least two values"));
    }
    if let Some(v) = net_values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("net value {v} is not positive")));
    }
    if trading_days == 0 {
        return Err(Error::arg("annualized return over zero days"));
    }
    let total = net_values[net_values.len() - 1] / net_values[0];
    Ok(total.powf(RETURN_YEAR_DAYS / trading_days as f64) - 1.0)
}

/// Largest fractional fall from a running peak; 0 for fewer than two values.
pub fn max_drawdown(net_values: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &v in net_values {
        peak = peak.max(v);
        if peak > 0.0 {
            worst = worst.max((peak - v) / peak);
        }
    }
    worst
}

pub fn daily_returns(net_values: &[f64]) -> Vec<f64> {
    net_values.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

/// `√252 ×` sample standard deviation of daily returns.
pub fn annualized_volatility(daily: &[f64]) -> Result<f64> {
    if daily.len() < 2 {
        return Err(Error::arg("volatility needs at least two daily returns"));
    }
    Ok(VOLATILITY_YEAR_DAYS.sqrt() * stats::std_sample(daily))
}

/// `(r_p − r_f) / σ`; `None` when `σ` is zero.
pub fn sharpe(annualized_return: f64, risk_free: f64, volatility: f64) -> Option<f64> {
    (volatility > 0.0).then(|| (annualized_return - risk_free) / volatility)
}

/// Summary metrics as fractions (0.25 = 25%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioReport {
    pub annualized_return: f64,
    pub annualized_volatility: f64,
    pub max_drawdown: f64,
    pub sharpe: Option<f64>,
}

impl PortfolioReport {
    pub fn from_net_values(net_values: &[f64], risk_free: f64) -> Result<PortfolioReport> {
        let days = net_values.len().saturating_sub(1);
        let ar = annualized_return(net_values, days)?;
        let vol = annualized_volatility(&daily_returns(net_values))?;
        Ok(PortfolioReport {
            annualized_return: ar,
            annualized_volatility: vol,
            max_drawdown: max_drawdown(net_values),
            sharpe: sharpe(ar, risk_free, vol),
        })
    }
}

/// Strategy and benchmark metrics side by side with their differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkComparison {
    pub strategy: PortfolioReport,
    pub benchmark: PortfolioReport,
    pub excess_annualized_return: f64,
    pub excess_annualized_volatility: f64,
    pub excess_max_drawdown: f64,
    pub excess_sharpe: Option<f64>,
}

/// Both series rescaled to 1.0 at the common start, then compared metric by
/// metric (strategy minus benchmark).
pub fn compare_benchmark(
    strategy: &NetValueSeries,
    benchmark: &NetValueSeries,
    risk_free: f64,
) -> Result<BenchmarkComparison> {
    let a: BTreeSet<NaiveDate> = strategy.dates.iter().copied().collect();
    let b: BTreeSet<NaiveDate> = benchmark.dates.iter().copied().collect();
    let missing: Vec<NaiveDate> = a.symmetric_difference(&b).copied().collect();
    if !missing.is_empty() {
        return Err(Error::Alignment(missing));
    }
    let norm = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x / v[0]).collect() };
    let s = PortfolioReport::from_net_values(&norm(&strategy.net_value), risk_free)?;
    let m = PortfolioReport::from_net_values(&norm(&benchmark.net_value), risk_free)?;
    Ok(BenchmarkComparison {
        excess_annualized_return: s.annualized_return - m.annualized_return,
        excess_annualized_volatility: s.annualized_volatility - m.annualized_volatility,
        excess_max_drawdown: s.max_drawdown - m.max_drawdown,
        excess_sharpe: s.sharpe.zip(m.sharpe).map(|(x, y)| x - y),
        strategy: s,
        benchmark: m,
    })
}

/// Equal-weighted daily-rebalanced index over every stock with bars on both
/// days, on `dates` (which must be consecutive panel dates).
pub fn equal_weight_benchmark(panel: &PanelDataset, dates: &[NaiveDate]) -> Result<NetValueSeries> {
    let idx: Vec<usize> = dates
        .iter()
        .map(|d| panel.date_index(*d).ok_or(Error::DateOutOfRange(*d)))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(dates.len());
    let mut v = 1.0;
    for (i, &t) in idx.iter().enumerate() {
        if i > 0 {
            let prev = idx[i - 1];
            let rets: Vec<f64> = (0..panel.n_symbols())
                .filter_map(|n| Some(panel.cell(t, n)?.close / panel.cell(prev, n)?.close - 1.0))
                .collect();
            if !rets.is_empty() {
                v *= 1.0 + stats::mean(&rets);
            }
        }
        values.push(v);
    }
    NetValueSeries::from_values(dates.to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annualization_by_hand() {
        assert_eq!(annualized_return(&[1.0, 1.0], 10).unwrap(), 0.0);
        let r = annualized_return(&[1.0, 1.2], 125).unwrap();
        assert!((r - 0.44).abs() < 1e-12);
        assert!(annualized_return(&[1.0, 0.0], 1).is_err());
    }

    #[test]
    fn drawdown_cases() {
        assert_eq!(max_drawdown(&[1.0, 1.1, 1.2]), 0.0);
        assert!((max_drawdown(&[1.0, 1.2, 0.9, 1.1]) - 0.25).abs() < 1e-15);
        assert_eq!(max_drawdown(&[1.0]), 0.0);
    }

    #[test]
    fn volatility_and_sharpe() {
        let v = annualized_volatility(&[0.01, -0.01]).unwrap();
        assert!((v - 252f64.sqrt() * 0.02f64.sqrt() * 0.1).abs() < 1e-15);
        assert_eq!(sharpe(0.1, 0.1, 0.2), Some(0.0));
        assert_eq!(annualized_volatility(&[0.01, 0.01]).unwrap(), 0.0);
        assert_eq!(sharpe(0.1, 0.0, 0.0), None);
    }

    #[test]
    fn stamp_duty_switches() {
        let c = StrategyConfig::default();
        assert_eq!(
            c.stamp_duty(NaiveDate::from_ymd_opt(2023, 8, 25).unwrap()),
            0.001
        );
        assert_eq!(
            c.stamp_duty(NaiveDate::from_ymd_opt(2023, 8, 28).unwrap()),
            0.0005
        );
        let bad = StrategyConfig {
            n_drop: 6,
            fee_rate: -1.0,
            ..c
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("n_drop") && msg.contains("fee_rate"), "{msg}");
    }
}
