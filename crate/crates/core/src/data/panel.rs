use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HEADER: [&str; 8] = [
    "date", "symbol", "open", "high", "low", "close", "vwap", "volume",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ohlcv {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub vwap: f64,
    pub volume: f64,
}

/// One daily bar as it appears in the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub symbol: String,
    #[serde(flatten)]
    pub values: Ohlcv,
}

impl Bar {
    pub fn validate(&self) -> Result<()> {
        let v = &self.values;
        let bad = |message: String| Error::Validation {
            date: self.date,
            symbol: self.symbol.clone(),
            message,
        };
        for (name, price) in [
            ("open", v.open),
            ("high", v.high),
            ("low", v.low),
            ("close", v.close),
            ("vwap", v.vwap),
        ] {
            if !(price.is_finite() && price > 0.0) {
                return Err(bad(format!("{name} must be a positive price, got {price}")));
            }
        }
        if !(v.volume.is_finite() && v.volume >= 0.0) {
            return Err(bad(format!(
                "volume must be non-negative, got {}",
                v.volume
            )));
        }
        if v.low > v.open.min(v.close) {
            return Err(bad(format!("low {} above min(open, close)", v.low)));
        }
        if v.high < v.open.max(v.close) {
            return Err(bad(format!("high {} below max(open, close)", v.high)));
        }
        Ok(())
    }
}

/// Dense date × symbol bar table. `None` cells are missing bars.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    calendar: Vec<NaiveDate>,
    symbols: Vec<String>,
    cells: Vec<Option<Ohlcv>>,
}

impl PanelDataset {
    /// Builds a panel from bars in any order. Calendar and symbols are sorted.
    pub fn from_bars(bars: impl IntoIterator<Item = Bar>) -> Result<Self> {
        let mut by_key: BTreeMap<(NaiveDate, String), Ohlcv> = BTreeMap::new();
        for bar in bars {
            bar.validate()?;
            let key = (bar.date, bar.symbol.clone());
            if by_key.insert(key, bar.values).is_some() {
                return Err(Error::Validation {
                    date: bar.date,
                    symbol: bar.symbol,
                    message: "duplicate bar".into(),
                });
            }
        }
        let calendar: Vec<NaiveDate> = by_key
            .keys()
            .map(|(d, _)| *d)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let symbols: Vec<String> = by_key
            .keys()
            .map(|(_, s)| s.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let date_ix: HashMap<NaiveDate, usize> =
            calendar.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let sym_ix: HashMap<&str, usize> = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut cells = vec![None; calendar.len() * symbols.len()];
        for ((date, symbol), values) in &by_key {
            cells[date_ix[date] * symbols.len() + sym_ix[symbol.as_str()]] = Some(*values);
        }
        Ok(PanelDataset {
            calendar,
            symbols,
            cells,
        })
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn n_dates(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn cell(&self, t: usize, n: usize) -> Option<&Ohlcv> {
        self.cells[t * self.symbols.len() + n].as_ref()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    /// Whether the stock can be traded on day `t` (bar present, volume > 0).
    pub fn is_tradable(&self, t: usize, n: usize) -> bool {
        matches!(self.cell(t, n), Some(bar) if bar.volume > 0.0)
    }

    /// Restricts the panel to the given symbols, in the given order.
    pub fn select_symbols(&self, symbols: &[String]) -> Result<PanelDataset> {
        let idx = symbols
            .iter()
            .map(|s| {
                self.symbol_index(s)
                    .ok_or_else(|| Error::arg(format!("unknown symbol {s}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cells = Vec::with_capacity(self.calendar.len() * idx.len());
        for t in 0..self.calendar.len() {
            for &n in &idx {
                cells.push(self.cell(t, n).copied());
            }
        }
        Ok(PanelDataset {
            calendar: self.calendar.clone(),
            symbols: symbols.to_vec(),
            cells,
        })
    }

    pub fn bars(&self) -> impl Iterator<Item = Bar> + '_ {
        self.calendar.iter().enumerate().flat_map(move |(t, date)| {
            self.symbols
                .iter()
                .enumerate()
                .filter_map(move |(n, symbol)| {
                    self.cell(t, n).map(|values| Bar {
                        date: *date,
                        symbol: symbol.clone(),
                        values: *values,
                    })
                })
        })
    }

    /// Writes the panel in the ingestion CSV layout. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(HEADER)?;
        for bar in self.bars() {
            let v = bar.values;
            w.write_record([
                bar.date.to_string(),
                bar.symbol,
                v.open.to_string(),
                v.high.to_string(),
                v.low.to_string(),
                v.close.to_string(),
                v.vwap.to_string(),
                v.volume.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_date(path: &Path, line: usize, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("bad date {s:?}: {e}"),
    })
}

fn parse_f64(path: &Path, line: usize, column: &str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("bad {column} {s:?}: {e}"),
    })
}

fn column_index(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column {name:?}"),
        })
}

fn read_bars(path: &Path) -> Result<Vec<Bar>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols = HEADER
        .iter()
        .map(|h| column_index(path, &headers, h))
        .collect::<Result<Vec<_>>>()?;
    let mut bars = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() < headers.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let field = |i: usize| &record[cols[i]];
        bars.push(Bar {
            date: parse_date(path, line, field(0))?,
            symbol: field(1).trim().to_string(),
            values: Ohlcv {
                open: parse_f64(path, line, "open", field(2))?,
                high: parse_f64(path, line, "high", field(3))?,
                low: parse_f64(path, line, "low", field(4))?,
                close: parse_f64(path, line, "close", field(5))?,
                vwap: parse_f64(path, line, "vwap", field(6))?,
                volume: parse_f64(path, line, "volume", field(7))?,
            },
        });
    }
    Ok(bars)
}

/// Adjustment events keyed by symbol: `(event date, factor)`.
fn read_adjustments(path: &Path) -> Result<HashMap<String, Vec<(NaiveDate, f64)>>> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path)?;
    let headers = rdr.headers()?.clone();
    let (di, si, fi) = (
        column_index(path, &headers, "date")?,
        column_index(path, &headers, "symbol")?,
        column_index(path, &headers, "factor")?,
    );
    let mut out: HashMap<String, Vec<(NaiveDate, f64)>> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let date = parse_date(path, line, &record[di])?;
        let factor = parse_f64(path, line, "factor", &record[fi])?;
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("adjustment factor must be positive, got {factor}"),
            });
        }
        out.entry(record[si].trim().to_string())
            .or_default()
            .push((date, factor));
    }
    Ok(out)
}

/// Loads bars from CSV, applying forward-adjustment factors when supplied.
///
/// An adjustment row `(d, s, f)` multiplies every price of `s` dated strictly
/// before `d` by `f`; several events compound.
pub fn load_panel(path: &Path, adjustment: Option<&Path>) -> Result<PanelDataset> {
    let mut bars = read_bars(path)?;
    for bar in &bars {
        bar.validate()?;
    }
    if let Some(adj_path) = adjustment {
        let events = read_adjustments(adj_path)?;
        for bar in &mut bars {
            let Some(evs) = events.get(&bar.symbol) else {
                continue;
            };
            let k: f64 = evs
                .iter()
                .filter(|(d, _)| bar.date < *d)
                .map(|(_, f)| f)
                .product();
            let v = &mut bar.values;
            v.open *= k;
            v.high *= k;
            v.low *= k;
            v.close *= k;
            v.vwap *= k;
        }
    }
    PanelDataset::from_bars(bars)
}

/// One symbol per line; blank lines and `#` comments ignored.
pub fn load_exclusions(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let s = line.trim();
        if !s.is_empty() && !s.starts_with('#') {
            out.push(s.to_string());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    const SMALL: &str = "date,symbol,open,high,low,close,vwap,volume
2024-01-02,AAA,10,11,9,10.5,10.2,1000
2024-01-02,BBB,20,21,19,20.5,20.2,2000
2024-01-03,AAA,10.5,12,10,11,11.1,1100
2024-01-03,BBB,20.5,22,20,21,21.1,2100
2024-01-04,AAA,11,12,10,10,10.9,900
2024-01-04,BBB,21,22,20,20,20.8,0
";

    #[test]
    fn loads_small_panel() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bars.csv", SMALL);
        let panel = load_panel(&p, None).unwrap();
        assert_eq!(panel.n_dates(), 3);
        assert_eq!(panel.n_symbols(), 2);
        assert_eq!(panel.cell(1, 0).unwrap().close, 11.0);
    }

    #[test]
    fn adjustment_scales_prior_prices_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bars.csv", SMALL);
        let a = write(&dir, "adj.csv", "date,symbol,factor\n2024-01-03,AAA,2.0\n");
        let raw = load_panel(&p, None).unwrap();
        let adj = load_panel(&p, Some(&a)).unwrap();
        let (r0, a0) = (raw.cell(0, 0).unwrap(), adj.cell(0, 0).unwrap());
        assert_eq!(a0.close, 2.0 * r0.close);
        assert_eq!(a0.open, 2.0 * r0.open);
        assert_eq!(a0.vwap, 2.0 * r0.vwap);
        assert_eq!(a0.volume, r0.volume);
        assert_eq!(adj.cell(1, 0), raw.cell(1, 0));
        assert_eq!(adj.cell(0, 1), raw.cell(0, 1));
    }

    #[test]
    fn negative_volume_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "bars.csv",
            "date,symbol,open,high,low,close,vwap,volume\n2024-01-02,AAA,10,11,9,10,10,-1\n",
        );
        let err = load_panel(&p, None).unwrap_err();
        assert!(
            matches!(err, Error::Validation { ref symbol, .. } if symbol == "AAA"),
            "{err}"
        );
    }

    #[test]
    fn non_positive_price_names_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "bars.csv",
            "date,symbol,open,high,low,close,vwap,volume\n2024-01-02,AAA,10,11,9,0,10,5\n",
        );
        let msg = load_panel(&p, None).unwrap_err().to_string();
        assert!(msg.contains("2024-01-02") && msg.contains("AAA"), "{msg}");
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "bars.csv",
            "date,symbol,open,high,low,close,vwap,volume\n2024-01-02,AAA,10,11,9,10,10,5\n2024-01-03,AAA,ten,11,9,10,10,5\n",
        );
        match load_panel(&p, None).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_cells_are_none() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "bars.csv",
            "date,symbol,open,high,low,close,vwap,volume\n2024-01-02,AAA,10,11,9,10,10,5\n2024-01-03,BBB,10,11,9,10,10,5\n",
        );
        let panel = load_panel(&p, None).unwrap();
        assert!(panel.cell(0, 1).is_none());
        assert!(panel.cell(1, 0).is_none());
    }

    #[test]
    fn pool_filter() {
        let dir = tempfile::tempdir().unwrap();
        let panel = load_panel(&write(&dir, "bars.csv", SMALL), None).unwrap();
        let d2 = NaiveDate::from_ymd_opt(2024, 1, 2).unwrap();
        let d4 = NaiveDate::from_ymd_opt(2024, 1, 4).unwrap();
        assert_eq!(
            panel.filter_stock_pool(&[], d2).unwrap(),
            vec!["AAA", "BBB"]
        );
        // BBB has zero volume on the 4th
        assert_eq!(panel.filter_stock_pool(&[], d4).unwrap(), vec!["AAA"]);
        assert_eq!(
            panel.filter_stock_pool(&["AAA".to_string()], d2).unwrap(),
            vec!["BBB"]
        );
        let outside = NaiveDate::from_ymd_opt(2024, 2, 1).unwrap();
        assert!(matches!(
            panel.filter_stock_pool(&[], outside),
            Err(Error::DateOutOfRange(_))
        ));
    }
}
