//! Writes the bundled synthetic fixture: bars, stock metadata and a run
//! config sized for a laptop.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use stockformer::data::PanelDataset;
use stockformer::synthetic::{synthetic_bars, synthetic_metadata};

use crate::config::{RunConfig, SplitConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub stocks: usize,
    pub days: usize,
    pub missing_rate: f64,
    pub industries: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            stocks: 12,
            days: 260,
            missing_rate: 0.0005,
            industries: 3,
            seed: 7,
        }
    }
}

/// Small-model settings for the synthetic fixture.
pub fn fixture_config(dir: &Path, seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.data.panel = dir.join("bars.csv");
    c.factors.metadata = Some(dir.join("metadata.csv"));
    c.factors.ic_threshold = 0.06;
    c.splits = SplitConfig {
        train: 120,
        validation: 20,
        test: 20,
        step: 20,
    };
    c.model.d_model = 16;
    c.model.epochs = 20;
    c.model.batch_size = 8;
    c.model.lr = 0.002;
    c.model.dropout = 0.1;
    c.model.patience = 5;
    c.model.spatial_dim = 8;
    c.model.seed = seed;
    c.output.dir = dir.join("out");
    c
}

/// Writes `bars.csv`, `metadata.csv` and `config.toml` into `dir` and
/// returns the config path.
pub fn write_fixture(dir: &Path, options: &SynthOptions) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let dir = dir.canonicalize()?;
    let bars = synthetic_bars(
        options.stocks,
        options.days,
        options.missing_rate,
        options.seed,
    );
    let panel = PanelDataset::from_bars(bars)?;
    panel.write_csv(&dir.join("bars.csv"))?;

    let meta = synthetic_metadata(
        options.stocks,
        options.industries,
        panel.calendar()[0],
        options.seed,
    );
    let mut w = csv::Writer::from_path(dir.join("metadata.csv"))?;
    w.write_record(["symbol", "industry", "mktcap_date", "mktcap"])?;
    for (symbol, caps) in &meta.mktcap {
        for (date, cap) in caps {
            w.write_record([
                symbol.clone(),
                meta.industry[symbol].clone(),
                date.to_string(),
                cap.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let path = dir.join("config.toml");
    fs::write(&path, fixture_config(&dir, options.seed).to_toml_string())?;
    Ok(path)
}
