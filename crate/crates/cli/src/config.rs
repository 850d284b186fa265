//! Run configuration file: sections `data`, `splits`, `factors`, `wavelet`,
//! `model`, `strategy`, `output` and `run`. Every key is optional; missing
//! keys take the reference defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stockformer::backtest::StrategyConfig;
use stockformer::data::{TEST_DAYS, TRAIN_DAYS, VALIDATION_DAYS};
use stockformer::factors::IC_THRESHOLD;
use stockformer::model::ModelConfig;
use stockformer::Error;

/// Default split stride in trading days.
pub const SPLIT_STEP: usize = 61;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Bar CSV with columns `date,symbol,open,high,low,close,vwap,volume`.
    pub panel: PathBuf,
    pub exclusions: Option<PathBuf>,
    pub adjustment: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub step: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: TRAIN_DAYS,
            validation: VALIDATION_DAYS,
            test: TEST_DAYS,
            step: SPLIT_STEP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorConfig {
    /// CSV `symbol,industry,mktcap_date,mktcap`; without it factors are not
    /// neutralized.
    pub metadata: Option<PathBuf>,
    pub ic_threshold: f64,
    /// Keep only factors whose mean |IC| clears the threshold.
    pub select_effective: bool,
}

impl Default for FactorConfig {
    fn default() -> Self {
        FactorConfig {
            metadata: None,
            ic_threshold: IC_THRESHOLD,
            select_effective: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveletConfig {
    /// `haar` or `db2`.
    pub name: String,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig {
            name: "haar".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Parallel runs for `sweep` and `ablate`; 0 uses every core.
    pub jobs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub splits: SplitConfig,
    pub factors: FactorConfig,
    pub wavelet: WaveletConfig,
    pub model: ModelConfig,
    pub strategy: StrategyConfig,
    pub output: OutputConfig,
    pub run: RunSection,
}

/// Keys that are valid but absent from the serialized defaults.
const OPTIONAL_KEYS: [&str; 3] = ["data.exclusions", "data.adjustment", "factors.metadata"];
/// The wavelet is configured once, in its own section.
const HIDDEN_KEYS: [&str; 1] = ["model.wavelet"];

fn unknown_keys(user: &toml::Table, reference: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in user {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        if HIDDEN_KEYS.contains(&path.as_str()) {
            out.push(path);
            continue;
        }
        match (value, reference.get(key)) {
            (toml::Value::Table(u), Some(toml::Value::Table(r))) => unknown_keys(u, r, &path, out),
            (_, Some(_)) => {}
            (_, None) if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            (_, None) => out.push(path),
        }
    }
}

impl RunConfig {
    /// Parses and validates a config document, reporting every unknown key
    /// or invalid value in one error.
    pub fn from_toml_str(text: &str) -> Result<RunConfig, Error> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let reference = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        let mut unknown = Vec::new();
        unknown_keys(&user, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )));
        }
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.model.wavelet = config.wavelet.name.clone();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        if let Some(toml::Value::Table(model)) = table.get_mut("model") {
            model.remove("wavelet");
        }
        toml::to_string_pretty(&table).expect("table serializes")
    }

    pub fn validate(&self) -> Result<(), Error> {
        let mut problems = Vec::new();
        let mut push = |section: &str, e: Error| match e {
            Error::Config(m) => problems.extend(m.split("; ").map(|p| format!("{section}: {p}"))),
            other => problems.push(format!("{section}: {other}")),
        };
        if let Err(e) = self.model.validate() {
            push("model", e);
        }
        if let Err(e) = self.strategy.validate() {
            push("strategy", e);
        }
        let s = &self.splits;
        for (key, v) in [
            ("train", s.train),
            ("validation", s.validation),
            ("test", s.test),
            ("step", s.step),
        ] {
            if v == 0 {
                problems.push(format!("splits: {key} must be positive"));
            }
        }
        if s.train <= self.model.t1 + self.model.t2 {
            problems.push(format!(
                "splits: train ({}) must exceed t1 + t2 ({})",
                s.train,
                self.model.t1 + self.model.t2
            ));
        }
        if s.validation < self.model.t2 || s.test < self.model.t2 {
            problems.push(format!(
                "splits: validation and test must cover t2 = {} days",
                self.model.t2
            ));
        }
        if !(0.0..1.0).contains(&self.factors.ic_threshold) {
            problems.push(format!(
                "factors: ic_threshold must be in [0, 1), got {}",
                self.factors.ic_threshold
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
