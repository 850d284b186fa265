//! Seeded synthetic datasets for tests, benchmarks and demos.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Bar, Ohlcv};
use crate::error::Result;
use crate::factors::{FactorPanel, StockMetadata, RETURN_CHANNEL, TREND_CHANNEL};

/// Return on day `t` is this multiple of the first factor on day `t - PLANTED_LAG`.
pub const PLANTED_COEFFICIENT: f64 = 0.1;
pub const PLANTED_LAG: usize = 2;

/// `n` consecutive weekdays starting on or after `start`.
pub fn weekday_calendar(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

pub fn symbols(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("S{i:04}")).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Model-ready panel with channels `[return, trend, F0, ...]`. Factors are
/// standard normal and the return is `PLANTED_COEFFICIENT * F0` lagged by
/// `PLANTED_LAG` days plus Gaussian noise of scale `noise`.
pub fn planted_signal_panel(
    n_stocks: usize,
    n_dates: usize,
    n_factors: usize,
    noise: f64,
    seed: u64,
) -> Result<FactorPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 2 + n_factors.max(1);
    let mut values = vec![0.0; n_dates * n_stocks * c];
    for t in 0..n_dates {
        for s in 0..n_stocks {
            for f in 2..c {
                values[(t * n_stocks + s) * c + f] = normal(&mut rng);
            }
        }
    }
    for t in 0..n_dates {
        for s in 0..n_stocks {
            let signal = if t >= PLANTED_LAG {
                PLANTED_COEFFICIENT * values[((t - PLANTED_LAG) * n_stocks + s) * c + 2]
            } else {
                0.0
            };
            let r = signal + noise * normal(&mut rng);
            let cell = (t * n_stocks + s) * c;
            values[cell] = r;
            values[cell + 1] = f64::from(u8::from(r > 0.0));
        }
    }
    let mut channels = vec![RETURN_CHANNEL.to_string(), TREND_CHANNEL.to_string()];
    channels.extend((0..c - 2).map(|f| format!("F{f}")));
    FactorPanel::new(
        weekday_calendar(
            NaiveDate::from_ymd_opt(2020, 1, 2).expect("valid date"),
            n_dates,
        ),
        symbols(n_stocks),
        channels,
        values,
    )
}

/// Daily OHLCV bars from independent log-normal random walks with a weak
/// one-day momentum. A fraction `missing_rate` of bars after the first day
/// is dropped to mimic suspensions.
pub fn synthetic_bars(n_stocks: usize, n_dates: usize, missing_rate: f64, seed: u64) -> Vec<Bar> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calendar = weekday_calendar(
        NaiveDate::from_ymd_opt(2018, 3, 1).expect("valid date"),
        n_dates,
    );
    let names = symbols(n_stocks);
    let mut close: Vec<f64> = (0..n_stocks)
        .map(|_| 5.0 + 45.0 * rng.random::<f64>())
        .collect();
    let mut last_ret = vec![0.0; n_stocks];
    let mut bars = Vec::with_capacity(n_stocks * n_dates);
    for (t, date) in calendar.iter().enumerate() {
        for s in 0..n_stocks {
            let r = 0.1 * last_ret[s] + 0.02 * normal(&mut rng);
            last_ret[s] = r;
            let open = close[s] * (1.0 + 0.005 * normal(&mut rng));
            close[s] *= r.exp();
            let spread = close[s].max(open) * 0.01 * rng.random::<f64>();
            let high = close[s].max(open) + spread;
            let low = (close[s].min(open) - spread).max(0.01);
            let volume = (1e6 * (1.0 + rng.random::<f64>())).round();
            if t > 0 && rng.random::<f64>() < missing_rate {
                continue;
            }
            bars.push(Bar {
                date: *date,
                symbol: names[s].clone(),
                values: Ohlcv {
                    open,
                    high,
                    low,
                    close: close[s],
                    vwap: (open + high + low + close[s]) / 4.0,
                    volume,
                },
            });
        }
    }
    bars
}

/// Industry labels cycling through `n_industries` groups and one market
/// capitalization per stock dated at `date`.
pub fn synthetic_metadata(
    n_stocks: usize,
    n_industries: usize,
    date: NaiveDate,
    seed: u64,
) -> StockMetadata {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meta = StockMetadata::default();
    for (i, s) in symbols(n_stocks).iter().enumerate() {
        let cap = (22.0 + 1.5 * normal(&mut rng)).exp();
        meta.insert(s, &format!("IND{}", i % n_industries.max(1)), date, cap);
    }
    meta
}
