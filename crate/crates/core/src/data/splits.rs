use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAIN_DAYS: usize = 486;
pub const VALIDATION_DAYS: usize = 81;
pub const TEST_DAYS: usize = 81;

/// A contiguous run of trading days; `offset` indexes the source calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub days: usize,
    pub offset: usize,
}

impl SplitWindow {
    fn new(calendar: &[NaiveDate], offset: usize, days: usize) -> Self {
        SplitWindow {
            start: calendar[offset],
            end: calendar[offset + days - 1],
            days,
            offset,
        }
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.days
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingSplit {
    pub train: SplitWindow,
    pub validation: SplitWindow,
    pub test: SplitWindow,
}

/// Train/validation/test windows advancing by `step` trading days.
pub fn make_rolling_splits(
    calendar: &[NaiveDate],
    train_len: usize,
    val_len: usize,
    test_len: usize,
    step: usize,
) -> Result<Vec<RollingSplit>> {
    if train_len == 0 || val_len == 0 || test_len == 0 {
        return Err(Error::Config("split lengths must be positive".into()));
    }
    if step == 0 {
        return Err(Error::Config("split step must be positive".into()));
    }
    let total = train_len + val_len + test_len;
    if calendar.len() < total {
        return Err(Error::Config(format!(
            "calendar has {} trading days, rolling splits need at least {total}",
            calendar.len()
        )));
    }
    let count = (calendar.len() - total) / step + 1;
    Ok((0..count)
        .map(|i| {
            let s = i * step;
            RollingSplit {
                train: SplitWindow::new(calendar, s, train_len),
                validation: SplitWindow::new(calendar, s + train_len, val_len),
                test: SplitWindow::new(calendar, s + train_len + val_len, test_len),
            }
        })
        .collect())
}
