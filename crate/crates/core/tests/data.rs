use chrono::{Datelike, NaiveDate, Weekday};
use proptest::prelude::*;
use stockformer::data::{
    compute_returns, load_panel, make_rolling_splits, Bar, Ohlcv, PanelDataset,
};
use stockformer::synthetic::synthetic_bars;

fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Weekday exchange closures on the Shanghai market, 2018 through January 2024.
const CLOSURES: &[&str] = &[
    "2018-01-01",
    "2018-02-15",
    "2018-02-16",
    "2018-02-19",
    "2018-02-20",
    "2018-02-21",
    "2018-04-05",
    "2018-04-06",
    "2018-04-30",
    "2018-05-01",
    "2018-06-18",
    "2018-09-24",
    "2018-10-01",
    "2018-10-02",
    "2018-10-03",
    "2018-10-04",
    "2018-10-05",
    "2018-12-31",
    "2019-01-01",
    "2019-02-04",
    "2019-02-05",
    "2019-02-06",
    "2019-02-07",
    "2019-02-08",
    "2019-04-05",
    "2019-05-01",
    "2019-05-02",
    "2019-05-03",
    "2019-06-07",
    "2019-09-13",
    "2019-10-01",
    "2019-10-02",
    "2019-10-03",
    "2019-10-04",
    "2019-10-07",
    "2020-01-01",
    "2020-01-24",
    "2020-01-27",
    "2020-01-28",
    "2020-01-29",
    "2020-01-30",
    "2020-01-31",
    "2020-04-06",
    "2020-05-01",
    "2020-05-04",
    "2020-05-05",
    "2020-06-25",
    "2020-06-26",
    "2020-10-01",
    "2020-10-02",
    "2020-10-05",
    "2020-10-06",
    "2020-10-07",
    "2020-10-08",
    "2021-01-01",
    "2021-02-11",
    "2021-02-12",
    "2021-02-15",
    "2021-02-16",
    "2021-02-17",
    "2021-04-05",
    "2021-05-03",
    "2021-05-04",
    "2021-05-05",
    "2021-06-14",
    "2021-09-20",
    "2021-09-21",
    "2021-10-01",
    "2021-10-04",
    "2021-10-05",
    "2021-10-06",
    "2021-10-07",
    "2022-01-03",
    "2022-01-31",
    "2022-02-01",
    "2022-02-02",
    "2022-02-03",
    "2022-02-04",
    "2022-04-04",
    "2022-04-05",
    "2022-05-02",
    "2022-05-03",
    "2022-05-04",
    "2022-06-03",
    "2022-09-12",
    "2022-10-03",
    "2022-10-04",
    "2022-10-05",
    "2022-10-06",
    "2022-10-07",
    "2023-01-02",
    "2023-01-23",
    "2023-01-24",
    "2023-01-25",
    "2023-01-26",
    "2023-01-27",
    "2023-04-05",
    "2023-05-01",
    "2023-05-02",
    "2023-05-03",
    "2023-06-22",
    "2023-06-23",
    "2023-09-29",
    "2023-10-02",
    "2023-10-03",
    "2023-10-04",
    "2023-10-05",
    "2023-10-06",
    "2024-01-01",
];

fn exchange_calendar(from: &str, to: &str) -> Vec<NaiveDate> {
    let closed: Vec<NaiveDate> = CLOSURES.iter().map(|s| date(s)).collect();
    date(from)
        .iter_days()
        .take_while(|d| *d <= date(to))
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) && !closed.contains(d))
        .collect()
}

/// (train start, train end, validation start, validation end, test start, test end)
const PUBLISHED_SPLITS: [[&str; 6]; 14] = [
    [
        "2018-03-01",
        "2020-02-28",
        "2020-03-02",
        "2020-06-30",
        "2020-07-01",
        "2020-10-29",
    ],
    [
        "2018-05-31",
        "2020-05-29",
        "2020-06-01",
        "2020-09-23",
        "2020-09-24",
        "2021-01-25",
    ],
    [
        "2018-08-27",
        "2020-08-26",
        "2020-08-27",
        "2020-12-25",
        "2020-12-28",
        "2021-04-28",
    ],
    [
        "2018-11-28",
        "2020-11-27",
        "2020-11-30",
        "2021-03-30",
        "2021-03-31",
        "2021-07-28",
    ],
    [
        "2019-03-04",
        "2021-03-02",
        "2021-03-03",
        "2021-06-30",
        "2021-07-01",
        "2021-11-01",
    ],
    [
        "2019-06-03",
        "2021-06-01",
        "2021-06-02",
        "2021-09-27",
        "2021-09-28",
        "2022-01-26",
    ],
    [
        "2019-08-28",
        "2021-08-26",
        "2021-08-27",
        "2021-12-28",
        "2021-12-29",
        "2022-05-05",
    ],
    [
        "2019-11-29",
        "2021-11-30",
        "2021-12-01",
        "2022-03-31",
        "2022-04-01",
        "2022-08-01",
    ],
    [
        "2020-03-04",
        "2022-03-03",
        "2022-03-04",
        "2022-07-04",
        "2022-07-05",
        "2022-11-02",
    ],
    [
        "2020-06-03",
        "2022-06-06",
        "2022-06-07",
        "2022-09-28",
        "2022-09-29",
        "2023-02-03",
    ],
    [
        "2020-08-31",
        "2022-08-30",
        "2022-08-31",
        "2022-12-29",
        "2022-12-30",
        "2023-05-05",
    ],
    [
        "2020-12-02",
        "2022-12-01",
        "2022-12-02",
        "2023-04-03",
        "2023-04-04",
        "2023-08-02",
    ],
    [
        "2021-03-05",
        "2023-03-06",
        "2023-03-07",
        "2023-07-05",
        "2023-07-06",
        "2023-11-03",
    ],
    [
        "2021-06-04",
        "2023-06-05",
        "2023-06-06",
        "2023-09-28",
        "2023-10-09",
        "2024-01-30",
    ],
];

#[test]
fn rolling_splits_reproduce_published_windows() {
    let calendar = exchange_calendar("2018-03-01", "2024-01-30");
    let splits = make_rolling_splits(&calendar, 486, 81, 81, 61).unwrap();
    assert_eq!(splits.len(), 14);
    for (s, row) in splits.iter().zip(PUBLISHED_SPLITS) {
        let got = [
            s.train.start,
            s.train.end,
            s.validation.start,
            s.validation.end,
            s.test.start,
            s.test.end,
        ];
        assert_eq!(got, row.map(date));
        assert_eq!(
            (s.train.days, s.validation.days, s.test.days),
            (486, 81, 81)
        );
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bars.csv");
    let panel = PanelDataset::from_bars(synthetic_bars(6, 40, 0.05, 3)).unwrap();
    panel.write_csv(&path).unwrap();
    let again = load_panel(&path, None).unwrap();
    assert_eq!(again, panel);
    for (a, b) in panel.bars().zip(again.bars()) {
        assert_eq!(a.values.close.to_bits(), b.values.close.to_bits());
        assert_eq!(a.values.vwap.to_bits(), b.values.vwap.to_bits());
    }
}

fn flat_bar(d: NaiveDate, symbol: &str, close: f64) -> Bar {
    Bar {
        date: d,
        symbol: symbol.into(),
        values: Ohlcv {
            open: close,
            high: close,
            low: close,
            close,
            vwap: close,
            volume: 100.0,
        },
    }
}

proptest! {
    #[test]
    fn split_windows_are_ordered_and_disjoint(
        n_days in 10usize..400,
        train in 1usize..120,
        val in 1usize..40,
        test in 1usize..40,
        step in 1usize..50,
    ) {
        let calendar: Vec<NaiveDate> = date("2021-01-04").iter_days().take(n_days).collect();
        match make_rolling_splits(&calendar, train, val, test, step) {
            Ok(splits) => {
                prop_assert_eq!(splits.len(), (n_days - train - val - test) / step + 1);
                for s in &splits {
                    prop_assert!(s.train.end < s.validation.start);
                    prop_assert!(s.validation.end < s.test.start);
                    prop_assert_eq!(s.train.range().end, s.validation.range().start);
                    prop_assert_eq!(s.validation.range().end, s.test.range().start);
                    prop_assert!(s.test.range().end <= n_days);
                }
            }
            Err(_) => prop_assert!(train + val + test > n_days),
        }
    }

    #[test]
    fn trend_label_marks_strict_gains(closes in prop::collection::vec(
        prop::sample::select(vec![9.5, 10.0, 10.0, 10.5, 11.0]), 2..30)) {
        let d0 = date("2022-03-01");
        let bars = closes.iter().enumerate().flat_map(|(t, &c)| {
            let d = d0 + chrono::Days::new(t as u64);
            [flat_bar(d, "A", c), flat_bar(d, "B", 20.0 - c)]
        });
        let returns = compute_returns(&PanelDataset::from_bars(bars).unwrap()).unwrap();
        for t in 1..closes.len() {
            for n in 0..2 {
                let r = returns.get(t, n);
                prop_assert_eq!(returns.label(t, n), if r > 0.0 { 1.0 } else { 0.0 });
            }
        }
    }
}
