use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Deserialize;

use super::preprocess::zscore_panel;
use super::{is_label_channel, FactorPanel};
use crate::error::{Error, Result};

const COLLINEAR_TOL: f64 = 1e-10;

/// Residuals of one cross-sectional regression and the regressors dropped
/// as collinear.
#[derive(Debug, Clone, PartialEq)]
pub struct Neutralized {
    pub residuals: Vec<f64>,
    pub dropped: Vec<String>,
}

/// Orthonormal basis of the retained design columns over the present rows.
struct Basis {
    columns: Vec<Vec<f64>>,
    dropped: Vec<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    // two passes keep the result orthogonal to working precision
    for _ in 0..2 {
        for q in basis {
            let c = dot(v, q);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
    }
}

impl Basis {
    fn build(design: Vec<(String, Vec<f64>)>) -> Basis {
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut dropped = Vec::new();
        for (name, mut col) in design {
            let norm0 = dot(&col, &col).sqrt();
            project_out(&mut col, &columns);
            let norm = dot(&col, &col).sqrt();
            if norm0 == 0.0 || norm <= COLLINEAR_TOL * norm0.max(1.0) {
                dropped.push(name);
                continue;
            }
            col.iter_mut().for_each(|x| *x /= norm);
            columns.push(col);
        }
        Basis { columns, dropped }
    }

    fn residualize(&self, y: &[f64]) -> Vec<f64> {
        let mut r = y.to_vec();
        project_out(&mut r, &self.columns);
        r
    }
}

/// Design columns in deterministic order: intercept, log market cap, then one
/// dummy per industry except the lexicographically first.
fn design(rows: &[usize], industry: Option<&[String]>, log_cap: &[f64]) -> Vec<(String, Vec<f64>)> {
    let mut cols = vec![
        ("intercept".to_string(), vec![1.0; rows.len()]),
        (
            "log_mktcap".to_string(),
            rows.iter().map(|&i| log_cap[i]).collect(),
        ),
    ];
    if let Some(ind) = industry {
        let labels: BTreeSet<&str> = ind.iter().map(String::as_str).collect();
        for label in labels.into_iter().skip(1) {
            let col = rows
                .iter()
                .map(|&i| f64::from(u8::from(ind[i] == label)))
                .collect();
            cols.push((format!("industry={label}"), col));
        }
    }
    cols
}

fn validate_inputs(
    factor: &[f64],
    industry: Option<&[String]>,
    mktcap: &[f64],
) -> Result<Vec<f64>> {
    if mktcap.len() != factor.len() || industry.is_some_and(|i| i.len() != factor.len()) {
        return Err(Error::shape(
            "neutralize",
            &[factor.len()],
            &[mktcap.len(), industry.map_or(0, <[String]>::len)],
        ));
    }
    mktcap
        .iter()
        .map(|&c| {
            if c > 0.0 && c.is_finite() {
                Ok(c.ln())
            } else {
                Err(Error::Domain(format!("market cap {c} is not positive")))
            }
        })
        .collect()
}

fn fit(factor: &[f64], industry: Option<&[String]>, log_cap: &[f64]) -> Result<Neutralized> {
    let rows: Vec<usize> = (0..factor.len()).filter(|&i| !factor[i].is_nan()).collect();
    let basis = Basis::build(design(&rows, industry, log_cap));
    if rows.len() <= basis.columns.len() {
        return Err(Error::arg(format!(
            "{} observations cannot support {} regressors",
            rows.len(),
            basis.columns.len()
        )));
    }
    let y: Vec<f64> = rows.iter().map(|&i| factor[i]).collect();
    let fitted = basis.residualize(&y);
    let mut residuals = vec![f64::NAN; factor.len()];
    for (k, &i) in rows.iter().enumerate() {
        residuals[i] = fitted[k];
    }
    Ok(Neutralized {
        residuals,
        dropped: basis.dropped,
    })
}

/// Least-squares residuals of `factor` on an intercept, log market cap and
/// industry dummies. Missing factor values stay missing and are left out of
/// the fit. Collinear regressors are dropped in design order and reported.
pub fn neutralize(
    factor: &[f64],
    industry: Option<&[String]>,
    mktcap: &[f64],
) -> Result<Neutralized> {
    let log_cap = validate_inputs(factor, industry, mktcap)?;
    fit(factor, industry, &log_cap)
}

#[derive(Debug, Deserialize)]
struct MetadataRow {
    symbol: String,
    industry: String,
    mktcap_date: NaiveDate,
    mktcap: f64,
}

/// Industry labels and dated market caps per symbol.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StockMetadata {
    pub industry: BTreeMap<String, String>,
    pub mktcap: BTreeMap<String, Vec<(NaiveDate, f64)>>,
}

impl StockMetadata {
    pub fn insert(&mut self, symbol: &str, industry: &str, date: NaiveDate, mktcap: f64) {
        self.industry
            .insert(symbol.to_string(), industry.to_string());
        let caps = self.mktcap.entry(symbol.to_string()).or_default();
        let at = caps.partition_point(|(d, _)| *d < date);
        if caps.get(at).is_some_and(|(d, _)| *d == date) {
            caps[at].1 = mktcap;
        } else {
            caps.insert(at, (date, mktcap));
        }
    }

    /// Latest market cap dated on or before `date`, else the earliest one.
    pub fn mktcap_on(&self, symbol: &str, date: NaiveDate) -> Option<f64> {
        let caps = self.mktcap.get(symbol)?;
        let at = caps.partition_point(|(d, _)| *d <= date);
        Some(if at == 0 {
            caps.first()?.1
        } else {
            caps[at - 1].1
        })
    }

    /// True when at least one symbol carries a non-blank industry label.
    pub fn has_industries(&self) -> bool {
        self.industry.values().any(|s| !s.trim().is_empty())
    }
}

/// Reads `symbol,industry,mktcap_date,mktcap`.
pub fn load_metadata(path: &Path) -> Result<StockMetadata> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut meta = StockMetadata::default();
    for (i, row) in reader.deserialize::<MetadataRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        if !(row.mktcap > 0.0) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: format!(
                    "market cap {} for {} is not positive",
                    row.mktcap, row.symbol
                ),
            });
        }
        meta.insert(
            &row.symbol,
            row.industry.trim(),
            row.mktcap_date,
            row.mktcap,
        );
    }
    Ok(meta)
}

/// Residual columns per factor channel and the notes raised on one date.
type DateResiduals = (Vec<(usize, Vec<f64>)>, Vec<String>);

/// Neutralizes every factor channel date by date and re-standardizes.
/// Returns the panel and one note per (date, dropped regressor) event.
pub fn neutralize_panel(
    panel: &FactorPanel,
    meta: &StockMetadata,
) -> Result<(FactorPanel, Vec<String>)> {
    let (nt, nn, nf) = (panel.n_dates(), panel.n_symbols(), panel.n_channels());
    let industries: Option<Vec<String>> = meta.has_industries().then(|| {
        panel
            .symbols
            .iter()
            .map(|s| meta.industry.get(s).cloned().unwrap_or_default())
            .collect()
    });
    let factor_channels: Vec<usize> = (0..nf)
        .filter(|&f| !is_label_channel(&panel.channels[f]))
        .collect();

    let per_date: Vec<DateResiduals> = (0..nt)
        .into_par_iter()
        .map(|t| -> Result<_> {
            let date = panel.dates[t];
            let caps: Vec<f64> = panel
                .symbols
                .iter()
                .map(|s| {
                    meta.mktcap_on(s, date)
                        .ok_or_else(|| Error::Config(format!("no market cap for {s}")))
                })
                .collect::<Result<_>>()?;
            let log_cap: Vec<f64> = caps.iter().map(|c| c.ln()).collect();
            let mut out = Vec::with_capacity(factor_channels.len());
            let mut notes = BTreeSet::new();
            let mut cached: Option<(Vec<usize>, Basis)> = None;
            for &f in &factor_channels {
                let y: Vec<f64> = (0..nn).map(|n| panel.get(t, n, f)).collect();
                let rows: Vec<usize> = (0..nn).filter(|&i| !y[i].is_nan()).collect();
                if rows.is_empty() {
                    continue;
                }
                if cached.as_ref().is_none_or(|(r, _)| *r != rows) {
                    let basis = Basis::build(design(&rows, industries.as_deref(), &log_cap));
                    cached = Some((rows.clone(), basis));
                }
                let basis = &cached.as_ref().expect("just built").1;
                if rows.len() <= basis.columns.len() {
                    return Err(Error::arg(format!(
                        "{date}: {} stocks cannot support {} regressors",
                        rows.len(),
                        basis.columns.len()
                    )));
                }
                for d in &basis.dropped {
                    notes.insert(format!("{date}: dropped collinear regressor {d}"));
                }
                let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                let r = basis.residualize(&ys);
                let mut full = vec![f64::NAN; nn];
                for (k, &i) in rows.iter().enumerate() {
                    full[i] = r[k];
                }
                out.push((f, full));
            }
            Ok((out, notes.into_iter().collect()))
        })
        .collect::<Result<_>>()?;

    let mut result = panel.clone();
    let mut notes = Vec::new();
    for (t, (cols, date_notes)) in per_date.into_iter().enumerate() {
        for (f, col) in cols {
            for (n, v) in col.into_iter().enumerate() {
                result.set(t, n, f, v);
            }
        }
        notes.extend(date_notes);
    }
    zscore_panel(&mut result);
    Ok((result, notes))
}
