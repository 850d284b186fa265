//! Bar ingestion, trading calendar, returns and rolling dataset splits.

mod panel;
mod returns;
mod splits;

pub use panel::{load_exclusions, load_panel, Bar, Ohlcv, PanelDataset};
pub use returns::{compute_returns, ReturnMatrix};
pub use splits::{
    make_rolling_splits, RollingSplit, SplitWindow, TEST_DAYS, TRAIN_DAYS, VALIDATION_DAYS,
};

use chrono::NaiveDate;

use crate::error::{Error, Result};

impl PanelDataset {
    /// Symbols not excluded, present on `date` and with non-zero volume.
    pub fn filter_stock_pool(&self, exclusions: &[String], date: NaiveDate) -> Result<Vec<String>> {
        let t = self.date_index(date).ok_or(Error::DateOutOfRange(date))?;
        Ok(self
            .symbols()
            .iter()
            .enumerate()
            .filter(|(_, s)| !exclusions.iter().any(|e| e == *s))
            .filter(|(n, _)| matches!(self.cell(t, *n), Some(bar) if bar.volume > 0.0))
            .map(|(_, s)| s.clone())
            .collect())
    }
}

/// Free-function form of [`PanelDataset::filter_stock_pool`].
pub fn filter_stock_pool(
    panel: &PanelDataset,
    exclusions: &[String],
    date: NaiveDate,
) -> Result<Vec<String>> {
    panel.filter_stock_pool(exclusions, date)
}
