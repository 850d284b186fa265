//! Prediction-quality metrics and the classification-versus-regression output
//! selection rule.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Share of confident probabilities above which classification output is used.
pub const CONFIDENCE_THRESHOLD: f64 = 0.20;
pub const CONFIDENT_HIGH: f64 = 0.6;
pub const CONFIDENT_LOW: f64 = 0.4;

/// Daily Pearson IC over finite pairs; `None` below three pairs or when
/// either side is constant.
pub fn ic(pred: &[f64], actual: &[f64]) -> Option<f64> {
    let (x, y) = stats::finite_pairs(pred, actual);
    if x.len() < 3 {
        return None;
    }
    stats::pearson(&x, &y)
}

/// Pearson IC of average ranks.
pub fn rank_ic(pred: &[f64], actual: &[f64]) -> Option<f64> {
    let (x, y) = stats::finite_pairs(pred, actual);
    if x.len() < 3 {
        return None;
    }
    stats::spearman(&x, &y)
}

/// Mean over sample standard deviation of a daily series; `None` when the
/// deviation is zero or undefined.
pub fn information_ratio(daily: &[f64]) -> Option<f64> {
    let sd = stats::std_sample(daily);
    (sd.is_finite() && sd > 0.0).then(|| stats::mean(daily) / sd)
}

/// Percentage of predicted labels that match `actual` (labels in {0, 1}).
pub fn directional_accuracy(pred_labels: &[f64], actual: &[f64]) -> Result<f64> {
    if pred_labels.len() != actual.len() {
        return Err(Error::shape(
            "directional_accuracy",
            &[pred_labels.len()],
            &[actual.len()],
        ));
    }
    if pred_labels.is_empty() {
        return Err(Error::arg("directional accuracy of no predictions"));
    }
    let correct = pred_labels
        .iter()
        .zip(actual)
        .filter(|(p, a)| p == a)
        .count();
    Ok(100.0 * correct as f64 / pred_labels.len() as f64)
}

/// Uptrend label from a class probability: 1 iff `p > 0.5`.
pub fn label_from_probability(p: f64) -> f64 {
    f64::from(u8::from(p > 0.5))
}

/// Uptrend label from a predicted return: 1 iff positive.
pub fn label_from_return(r: f64) -> f64 {
    f64::from(u8::from(r > 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputChoice {
    #[serde(rename = "cla")]
    Classification,
    #[serde(rename = "reg")]
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub high_confidence_proportion: f64,
    pub selected_output: OutputChoice,
}

/// Applies the selection rule to a known proportion.
pub fn select_output(proportion: f64, threshold: f64) -> OutputChoice {
    if proportion > threshold {
        OutputChoice::Classification
    } else {
        OutputChoice::Regression
    }
}

/// Fraction of probabilities above 0.6 or below 0.4, and the output it selects.
pub fn high_confidence_analysis(p_cla: &[f64], threshold: f64) -> ConfidenceReport {
    let confident = p_cla
        .iter()
        .filter(|&&p| !(CONFIDENT_LOW..=CONFIDENT_HIGH).contains(&p))
        .count();
    let proportion = if p_cla.is_empty() {
        0.0
    } else {
        confident as f64 / p_cla.len() as f64
    };
    ConfidenceReport {
        high_confidence_proportion: proportion,
        selected_output: select_output(proportion, threshold),
    }
}

/// Aggregate prediction quality; `None` fields are undefined ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ic_mean: f64,
    pub icir: Option<f64>,
    pub rank_ic_mean: f64,
    pub rank_icir: Option<f64>,
    pub directional_accuracy: f64,
    pub n_days: usize,
}

/// One date's cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPrediction {
    pub scores: Vec<f64>,
    pub pred_labels: Vec<f64>,
    pub actual_returns: Vec<f64>,
    pub actual_labels: Vec<f64>,
}

/// IC/RankIC per day, their means and ratios, and pooled directional
/// accuracy over cells with a known label.
pub fn evaluate(days: &[DailyPrediction]) -> Result<EvalReport> {
    let mut ics = Vec::new();
    let mut rics = Vec::new();
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for d in days {
        if let Some(v) = ic(&d.scores, &d.actual_returns) {
            ics.push(v);
        }
        if let Some(v) = rank_ic(&d.scores, &d.actual_returns) {
            rics.push(v);
        }
        for (p, a) in d.pred_labels.iter().zip(&d.actual_labels) {
            if a.is_finite() && p.is_finite() {
                preds.push(*p);
                labels.push(*a);
            }
        }
    }
    Ok(EvalReport {
        ic_mean: stats::mean(&ics),
        icir: information_ratio(&ics),
        rank_ic_mean: stats::mean(&rics),
        rank_icir: information_ratio(&rics),
        directional_accuracy: directional_accuracy(&preds, &labels)?,
        n_days: days.len(),
    })
}

impl EvalReport {
    /// Single-row CSV with the columns `IC, ICIR, Rank IC, Rank ICIR,
    /// Directional Accuracy`; undefined ratios are blank.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["ic", "icir", "rank_ic", "rank_icir", "directional_accuracy"])?;
        w.write_record(self.csv_row())?;
        w.flush()?;
        Ok(())
    }

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.ic_mean.to_string(),
            opt(self.icir),
            self.rank_ic_mean.to_string(),
            opt(self.rank_icir),
            self.directional_accuracy.to_string(),
        ]
    }
}
