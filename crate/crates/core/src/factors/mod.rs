//! Alpha360 price-volume factors, cross-sectional cleaning, industry and size
//! neutralization, and information-coefficient screening.

mod alpha360;
mod ic;
mod neutralize;
mod preprocess;

pub use alpha360::{build_alpha360, FactorCategory, FactorDefinition, LOOKBACK};
pub use ic::{forward_returns, ic_analysis, FactorIc, IcReport, IC_THRESHOLD};
pub use neutralize::{load_metadata, neutralize, neutralize_panel, Neutralized, StockMetadata};
pub use preprocess::{preprocess, Preprocessed};

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::ReturnMatrix;
use crate::error::{Error, Result};

pub const RETURN_CHANNEL: &str = "return";
pub const TREND_CHANNEL: &str = "trend";

const BINARY_MAGIC: &[u8; 8] = b"SFPANEL1";

/// T × N × F factor tensor, row-major with the channel axis innermost.
/// Missing cells are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    pub dates: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    pub channels: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BinaryHeader {
    dates: Vec<NaiveDate>,
    symbols: Vec<String>,
    channels: Vec<String>,
}

pub(crate) fn is_label_channel(name: &str) -> bool {
    name == RETURN_CHANNEL || name == TREND_CHANNEL
}

impl FactorPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        symbols: Vec<String>,
        channels: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = dates.len() * symbols.len() * channels.len();
        if values.len() != expected {
            return Err(Error::shape(
                "FactorPanel::new",
                &[dates.len(), symbols.len(), channels.len()],
                &[values.len()],
            ));
        }
        Ok(FactorPanel {
            dates,
            symbols,
            channels,
            values,
        })
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    fn offset(&self, t: usize, n: usize, f: usize) -> usize {
        (t * self.symbols.len() + n) * self.channels.len() + f
    }

    pub fn get(&self, t: usize, n: usize, f: usize) -> f64 {
        self.values[self.offset(t, n, f)]
    }

    pub fn set(&mut self, t: usize, n: usize, f: usize, v: f64) {
        let o = self.offset(t, n, f);
        self.values[o] = v;
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    /// All T × N values of channel `f`, row-major.
    pub fn channel(&self, f: usize) -> Vec<f64> {
        let nf = self.channels.len();
        self.values.iter().skip(f).step_by(nf).copied().collect()
    }

    pub(crate) fn set_channel(&mut self, f: usize, column: &[f64]) {
        let nf = self.channels.len();
        for (i, v) in column.iter().enumerate() {
            self.values[i * nf + f] = *v;
        }
    }

    /// Keeps the named channels, in the given order.
    pub fn select_channels(&self, names: &[String]) -> Result<FactorPanel> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.channel_index(n)
                    .ok_or_else(|| Error::arg(format!("unknown channel {n:?}")))
            })
            .collect::<Result<_>>()?;
        let rows = self.dates.len() * self.symbols.len();
        let nf = self.channels.len();
        let mut values = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            values.extend(idx.iter().map(|&f| self.values[r * nf + f]));
        }
        FactorPanel::new(
            self.dates.clone(),
            self.symbols.clone(),
            names.to_vec(),
            values,
        )
    }

    /// Rows `start..end` of the date axis.
    pub fn slice_dates(&self, start: usize, end: usize) -> FactorPanel {
        let row = self.symbols.len() * self.channels.len();
        FactorPanel {
            dates: self.dates[start..end].to_vec(),
            symbols: self.symbols.clone(),
            channels: self.channels.clone(),
            values: self.values[start * row..end * row].to_vec(),
        }
    }

    /// Prepends the `return` and `trend` channels, giving the model input
    /// layout `[return, trend, factors...]`.
    pub fn with_return_channels(&self, returns: &ReturnMatrix) -> Result<FactorPanel> {
        if returns.dates != self.dates {
            let missing = self
                .dates
                .iter()
                .filter(|d| !returns.dates.contains(d))
                .copied()
                .collect();
            return Err(Error::Alignment(missing));
        }
        if returns.symbols != self.symbols {
            return Err(Error::arg("return matrix and factor panel symbols differ"));
        }
        let nf = self.channels.len();
        let mut channels = vec![RETURN_CHANNEL.to_string(), TREND_CHANNEL.to_string()];
        channels.extend(self.channels.iter().cloned());
        let rows = self.dates.len() * self.symbols.len();
        let mut values = Vec::with_capacity(rows * (nf + 2));
        for r in 0..rows {
            values.push(returns.values[r]);
            values.push(returns.trend_labels[r]);
            values.extend_from_slice(&self.values[r * nf..(r + 1) * nf]);
        }
        FactorPanel::new(self.dates.clone(), self.symbols.clone(), channels, values)
    }

    /// Binary layout: 8-byte magic, u64 header length, JSON header, then the
    /// values as little-endian f64.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&BinaryHeader {
            dates: self.dates.clone(),
            symbols: self.symbols.clone(),
            channels: self.channels.clone(),
        })?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<FactorPanel> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: m.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != BINARY_MAGIC {
            return Err(bad("not a factor panel file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: BinaryHeader = serde_json::from_slice(body)?;
        let data = &bytes[16 + hlen..];
        if data.len() % 8 != 0 {
            return Err(bad("truncated values"));
        }
        let values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        FactorPanel::new(header.dates, header.symbols, header.channels, values)
            .map_err(|e| bad(&e.to_string()))
    }
}
