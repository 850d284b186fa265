use std::collections::BTreeSet;

use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stockformer::backtest::{
    annualized_return, annualized_volatility, compare_benchmark, max_drawdown, run_topk_dropout,
    sharpe, NetValueSeries, ScoreTable, Side, StrategyConfig,
};
use stockformer::data::{Bar, Ohlcv, PanelDataset};
use stockformer::synthetic::weekday_calendar;

fn calendar(n: usize) -> Vec<NaiveDate> {
    weekday_calendar(NaiveDate::from_ymd_opt(2023, 3, 1).unwrap(), n)
}

/// Panel from a close table `closes[t][n]` over symbols `names`.
fn panel(names: &[&str], closes: &[Vec<f64>]) -> PanelDataset {
    let dates = calendar(closes.len());
    PanelDataset::from_bars(closes.iter().zip(&dates).flat_map(|(row, d)| {
        row.iter().zip(names).map(|(&c, s)| Bar {
            date: *d,
            symbol: s.to_string(),
            values: Ohlcv {
                open: c,
                high: c,
                low: c,
                close: c,
                vwap: c,
                volume: 1000.0,
            },
        })
    }))
    .unwrap()
}

fn frictionless(k: usize, n_drop: usize) -> StrategyConfig {
    StrategyConfig {
        k,
        n_drop,
        fee_rate: 0.0,
        stamp_duty_before: 0.0,
        stamp_duty_after: 0.0,
        ..Default::default()
    }
}

fn scores(dates: &[NaiveDate], rows: &[&[(&str, f64)]]) -> ScoreTable {
    let mut table = ScoreTable::default();
    for (d, row) in dates.iter().zip(rows) {
        for (s, v) in *row {
            table.insert(*d, s, *v);
        }
    }
    table
}

#[test]
fn three_stock_ledger_matches_hand_trace() {
    let p = panel(
        &["A", "B", "C"],
        &[
            vec![10.0, 20.0, 5.0],
            vec![11.0, 18.0, 5.0],
            vec![12.0, 18.0, 6.0],
            vec![12.0, 20.0, 4.0],
        ],
    );
    let d = calendar(4);
    let table = scores(
        &d,
        &[
            &[("A", 0.9), ("B", 0.5), ("C", 0.1)],
            &[("A", 0.2), ("B", 0.8), ("C", 0.6)],
            &[("A", 0.5), ("B", 0.1), ("C", 0.9)],
        ],
    );
    let out = run_topk_dropout(&table, &p, &frictionless(2, 1)).unwrap();
    // Day 1: buy A and B with half the cash each at 11 and 18.
    // Day 2: sell A at 12 for 6/11, buy C at 6 with it; B is worth 0.5.
    // Day 3: sell B at 20 for 5/9, buy A at 12; C is worth (1/11)·4.
    let want = [1.0, 1.0, 6.0 / 11.0 + 0.5, 5.0 / 9.0 + 4.0 / 11.0];
    assert_eq!(out.dates, d);
    for (got, want) in out.net_value.iter().zip(want) {
        assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    }
    let held: Vec<&String> = out.positions[3].keys().collect();
    assert_eq!(held, ["A", "C"]);
    assert!((out.positions[3]["A"] - 5.0 / 9.0 / 12.0).abs() <= 1e-12);
}

#[test]
fn drop_three_of_five_replaces_the_lowest_ranked() {
    let names = ["S0", "S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8", "S9"];
    let p = panel(&names, &vec![vec![10.0; 10]; 3]);
    let d = calendar(3);
    let day0: Vec<(&str, f64)> = names
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, 1.0 - 0.1 * i as f64))
        .collect();
    let day1 = [
        ("S0", 0.9),
        ("S1", 0.1),
        ("S2", 0.8),
        ("S3", 0.2),
        ("S4", 0.3),
        ("S5", 0.95),
        ("S6", 0.85),
        ("S7", 0.05),
        ("S8", 0.7),
        ("S9", 0.6),
    ];
    let out =
        run_topk_dropout(&scores(&d, &[&day0, &day1]), &p, &StrategyConfig::default()).unwrap();
    let first: BTreeSet<&str> = out.positions[1].keys().map(String::as_str).collect();
    assert_eq!(first, BTreeSet::from(["S0", "S1", "S2", "S3", "S4"]));
    let second: BTreeSet<&str> = out.positions[2].keys().map(String::as_str).collect();
    assert_eq!(second, BTreeSet::from(["S0", "S2", "S5", "S6", "S8"]));
    let sold: BTreeSet<&str> = out
        .trades
        .iter()
        .filter(|t| t.date == d[2] && t.side == Side::Sell)
        .map(|t| t.symbol.as_str())
        .collect();
    assert_eq!(sold, BTreeSet::from(["S1", "S3", "S4"]));
}

#[test]
fn cold_start_buys_exactly_k() {
    let names = ["A", "B", "C", "D", "E", "F", "G"];
    let p = panel(&names, &vec![vec![3.0; 7]; 2]);
    let d = calendar(2);
    let row: Vec<(&str, f64)> = names
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, i as f64))
        .collect();
    let out = run_topk_dropout(&scores(&d, &[&row]), &p, &StrategyConfig::default()).unwrap();
    assert_eq!(out.trades.len(), 5);
    assert!(out.trades.iter().all(|t| t.side == Side::Buy));
}

#[test]
fn single_stock_buy_and_hold_tracks_price() {
    let closes = [4.0, 5.0, 4.5, 6.0, 5.5];
    let p = panel(&["A"], &closes.iter().map(|c| vec![*c]).collect::<Vec<_>>());
    let d = calendar(5);
    let rows: Vec<Vec<(&str, f64)>> = (0..4).map(|_| vec![("A", 1.0)]).collect();
    let refs: Vec<&[(&str, f64)]> = rows.iter().map(Vec::as_slice).collect();
    let out = run_topk_dropout(&scores(&d, &refs), &p, &frictionless(1, 1)).unwrap();
    for t in 1..5 {
        assert!((out.net_value[t] - closes[t] / closes[1]).abs() <= 1e-10);
    }
}

#[test]
fn metric_examples() {
    assert!((annualized_return(&[1.0, 1.2], 125).unwrap() - 0.44).abs() < 1e-12);
    assert_eq!(annualized_return(&[1.0, 1.0], 10).unwrap(), 0.0);
    assert!(annualized_return(&[1.0, 0.0], 10).is_err());
    assert!((max_drawdown(&[1.0, 1.2, 0.9, 1.1]) - 0.25).abs() < 1e-12);
    assert_eq!(max_drawdown(&[1.0]), 0.0);
    let sd = ((0.01f64 * 0.01 + 0.01 * 0.01) / 1.0).sqrt();
    assert!((annualized_volatility(&[0.01, -0.01]).unwrap() - 252f64.sqrt() * sd).abs() < 1e-12);
    assert_eq!(annualized_volatility(&[0.002, 0.002, 0.002]).unwrap(), 0.0);
    assert_eq!(sharpe(0.1, 0.02, 0.0), None);
    assert_eq!(sharpe(0.05, 0.05, 0.2), Some(0.0));
}

#[test]
fn doubled_daily_returns_beat_the_benchmark_by_hand() {
    let d = calendar(4);
    let bench =
        NetValueSeries::from_values(d.clone(), vec![1.0, 1.01, 1.01 * 0.98, 1.01 * 0.98 * 1.03])
            .unwrap();
    let strat =
        NetValueSeries::from_values(d, vec![1.0, 1.02, 1.02 * 0.96, 1.02 * 0.96 * 1.06]).unwrap();
    let c = compare_benchmark(&strat, &bench, 0.0).unwrap();
    let hand =
        (1.02f64 * 0.96 * 1.06).powf(250.0 / 3.0) - (1.01f64 * 0.98 * 1.03).powf(250.0 / 3.0);
    assert!((c.excess_annualized_return - hand).abs() < 1e-9);
    assert!(c.excess_annualized_return > 0.0);
    let same = compare_benchmark(&bench, &bench, 0.0).unwrap();
    assert_eq!(same.excess_annualized_return, 0.0);
    assert_eq!(same.excess_max_drawdown, 0.0);
    assert_eq!(same.excess_sharpe, Some(0.0));
}

fn drawdown_oracle(v: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        for j in i..v.len() {
            worst = worst.max((v[i] - v[j]) / v[i]);
        }
    }
    worst
}

proptest! {
    #[test]
    fn drawdown_matches_all_pairs_oracle(v in prop::collection::vec(0.1f64..3.0, 1..60)) {
        prop_assert!((max_drawdown(&v) - drawdown_oracle(&v)).abs() <= 1e-12);
    }

    #[test]
    fn fuzzed_runs_hold_k_and_balance_the_books(
        seed in any::<u64>(),
        n in 5usize..12,
        days in 3usize..25,
        k in 1usize..5,
        drop_frac in 0.0f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_drop = 1 + ((k - 1) as f64 * drop_frac) as usize;
        let names: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut closes = vec![(0..n).map(|_| rng.random_range(5.0..50.0)).collect::<Vec<f64>>()];
        for t in 1..days {
            let next = closes[t - 1].iter().map(|c| c * rng.random_range(0.9..1.1)).collect();
            closes.push(next);
        }
        let p = panel(&refs, &closes);
        let d = calendar(days);
        let mut table = ScoreTable::default();
        for date in &d[..days - 1] {
            for s in &names {
                table.insert(*date, s, rng.random::<f64>());
            }
        }
        let config = StrategyConfig { k, n_drop, ..Default::default() };
        let out = run_topk_dropout(&table, &p, &config).unwrap();
        prop_assert_eq!(out.net_value[0], 1.0);
        for t in 0..out.dates.len() {
            if t >= 1 {
                prop_assert_eq!(out.positions[t].len(), k);
            }
            let marked: f64 = out.positions[t].iter().map(|(s, q)| q * closes[t][names.iter().position(|x| x == s).unwrap()]).sum();
            prop_assert!((out.cash[t] + marked - out.net_value[t] * config.initial_cash).abs() <= 1e-8);
            if t >= 1 {
                let todays = out.trades.iter().filter(|x| x.date == d[t]);
                let (mut flow, mut buys, mut sells) = (0.0, 0, 0);
                for x in todays {
                    match x.side {
                        Side::Buy => { flow -= x.shares * x.price + x.fees; buys += 1; }
                        Side::Sell => { flow += x.shares * x.price - x.fees; sells += 1; }
                    }
                }
                prop_assert!((out.cash[t] - (out.cash[t - 1] + flow)).abs() <= 1e-12);
                if t >= 2 {
                    prop_assert!(buys <= n_drop && sells <= n_drop);
                }
            }
        }
    }
}
