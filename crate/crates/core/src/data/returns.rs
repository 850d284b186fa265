use chrono::NaiveDate;

use super::PanelDataset;
use crate::error::{Error, Result};

/// T × N simple close-to-close returns with matching trend labels.
///
/// Missing cells are `NaN` in both tables; labels are `1.0` for a strictly
/// positive return and `0.0` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    pub dates: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    pub values: Vec<f64>,
    pub trend_labels: Vec<f64>,
}

pub(crate) fn trend_label(r: f64) -> f64 {
    if r.is_nan() {
        f64::NAN
    } else if r > 0.0 {
        1.0
    } else {
        0.0
    }
}

impl ReturnMatrix {
    pub fn from_values(dates: Vec<NaiveDate>, symbols: Vec<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), dates.len() * symbols.len());
        let trend_labels = values.iter().map(|&r| trend_label(r)).collect();
        ReturnMatrix {
            dates,
            symbols,
            values,
            trend_labels,
        }
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn get(&self, t: usize, n: usize) -> f64 {
        self.values[t * self.symbols.len() + n]
    }

    pub fn label(&self, t: usize, n: usize) -> f64 {
        self.trend_labels[t * self.symbols.len() + n]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.symbols.len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn column(&self, n: usize) -> Vec<f64> {
        (0..self.dates.len()).map(|t| self.get(t, n)).collect()
    }

    /// Rows `start..end`.
    pub fn slice_dates(&self, start: usize, end: usize) -> ReturnMatrix {
        let n = self.symbols.len();
        ReturnMatrix {
            dates: self.dates[start..end].to_vec(),
            symbols: self.symbols.clone(),
            values: self.values[start * n..end * n].to_vec(),
            trend_labels: self.trend_labels[start * n..end * n].to_vec(),
        }
    }
}

/// Simple returns `close[t] / close[t-1] - 1`; the first row is missing.
pub fn compute_returns(panel: &PanelDataset) -> Result<ReturnMatrix> {
    if panel.n_dates() < 2 {
        return Err(Error::arg("compute_returns needs at least two dates"));
    }
    let (t_len, n_len) = (panel.n_dates(), panel.n_symbols());
    let mut values = vec![f64::NAN; t_len * n_len];
    for t in 1..t_len {
        for n in 0..n_len {
            if let (Some(prev), Some(cur)) = (panel.cell(t - 1, n), panel.cell(t, n)) {
                values[t * n_len + n] = cur.close / prev.close - 1.0;
            }
        }
    }
    Ok(ReturnMatrix::from_values(
        panel.calendar().to_vec(),
        panel.symbols().to_vec(),
        values,
    ))
}
