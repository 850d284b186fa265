//! Pipeline stages. Each stage reads the artifacts of the stage before it
//! from the output directory and writes its own.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stockformer::backtest::{
    compare_benchmark, equal_weight_benchmark, run_topk_dropout, BenchmarkComparison, ScoreTable,
};
use stockformer::data::{
    compute_returns, load_exclusions, load_panel, make_rolling_splits, PanelDataset, ReturnMatrix,
    RollingSplit,
};
use stockformer::eval::{
    evaluate, high_confidence_analysis, label_from_probability, label_from_return,
    ConfidenceReport, DailyPrediction, EvalReport, OutputChoice, CONFIDENCE_THRESHOLD,
};
use stockformer::factors::{
    build_alpha360, forward_returns, ic_analysis, load_metadata, neutralize_panel, preprocess,
    FactorPanel, LOOKBACK,
};
use stockformer::model::{
    evaluate_loss, predict_windows, spatial_embedding, train, windows_for_range, Ablation,
    LossBreakdown, Model, ModelConfig, Objective, PredictionBundle, RunManifest, TrainOutcome,
    Window,
};
use stockformer::signal::WaveletFilterPair;
use stockformer::tensor::ParameterStore;

use crate::config::RunConfig;
use crate::error::MissingArtifact;

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn stage(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn split_dir(&self, stage: &str, split: usize) -> PathBuf {
        self.root.join(stage).join(format!("split_{split:02}"))
    }

    pub fn panel(&self) -> PathBuf {
        self.root.join("ingest").join("panel.csv")
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("factors").join("features.bin")
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("splits").join("splits.json")
    }
}

fn require(path: &Path, command: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingArtifact {
            path: path.to_path_buf(),
            command,
        }
        .into())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestSummary {
    pub dates: usize,
    pub symbols: usize,
    pub excluded: Vec<String>,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
}

/// Loads and validates bars, applies adjustments and exclusions, and writes
/// the cleaned panel.
pub fn ingest(config: &RunConfig, layout: &Layout) -> Result<IngestSummary> {
    let data = &config.data;
    if data.panel.as_os_str().is_empty() {
        bail!(stockformer::Error::Config("data.panel is not set".into()));
    }
    let panel = load_panel(&data.panel, data.adjustment.as_deref())?;
    let exclusions = match &data.exclusions {
        Some(p) => load_exclusions(p)?,
        None => Vec::new(),
    };
    let mut keep = std::collections::BTreeSet::new();
    for date in panel.calendar() {
        keep.extend(panel.filter_stock_pool(&exclusions, *date)?);
    }
    let keep: Vec<String> = keep.into_iter().collect();
    let excluded: Vec<String> = panel
        .symbols()
        .iter()
        .filter(|s| !keep.contains(s))
        .cloned()
        .collect();
    let panel = panel.select_symbols(&keep)?;
    if panel.n_dates() == 0 || panel.n_symbols() == 0 {
        bail!(stockformer::Error::Argument(
            "no bars left after exclusions".into()
        ));
    }
    let dir = layout.stage("ingest");
    create_dir(&dir)?;
    panel.write_csv(&layout.panel())?;
    let summary = IngestSummary {
        dates: panel.n_dates(),
        symbols: panel.n_symbols(),
        excluded,
        first_date: panel.calendar()[0],
        last_date: *panel.calendar().last().expect("non-empty"),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    log::info!(
        "ingested {} dates × {} symbols",
        summary.dates,
        summary.symbols
    );
    Ok(summary)
}

fn load_ingested(layout: &Layout) -> Result<PanelDataset> {
    require(&layout.panel(), "ingest")?;
    Ok(load_panel(&layout.panel(), None)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FactorSummary {
    pub dates: usize,
    pub kept: Vec<String>,
    pub dropped_empty: Vec<String>,
    pub neutralized: bool,
    pub notes: Vec<String>,
    pub ic_dates: usize,
}

/// Alpha360 construction, cleaning, optional neutralization, IC screening on
/// the first training window, and the model input panel.
pub fn factors(config: &RunConfig, layout: &Layout) -> Result<FactorSummary> {
    let panel = load_ingested(layout)?;
    let returns = compute_returns(&panel)?;
    let pre = preprocess(&build_alpha360(&panel));
    let (factors, notes, neutralized) = match &config.factors.metadata {
        Some(path) => {
            let meta = load_metadata(path)?;
            let (p, notes) = neutralize_panel(&pre.panel, &meta)?;
            (p, notes, true)
        }
        None => {
            log::warn!("no factors.metadata configured; factors are not neutralized");
            (pre.panel, Vec::new(), false)
        }
    };
    let first = LOOKBACK - 1;
    if factors.n_dates() <= first + 1 {
        bail!(stockformer::Error::Argument(format!(
            "need more than {LOOKBACK} trading days to build factors, have {}",
            factors.n_dates()
        )));
    }
    let factors = factors.slice_dates(first, factors.n_dates());
    let returns = returns.slice_dates(first, returns.n_dates());

    let ic_dates = config.splits.train.min(factors.n_dates());
    let report = ic_analysis(
        &factors.slice_dates(0, ic_dates),
        &forward_returns(&returns.slice_dates(0, ic_dates)),
        config.factors.ic_threshold,
    )?;
    let dir = layout.stage("factors");
    create_dir(&dir)?;
    report.write_csv(&dir.join("ic_report.csv"))?;
    let mut kept = if config.factors.select_effective {
        report.effective_factors()
    } else {
        factors.channels.clone()
    };
    if kept.is_empty() {
        log::warn!("no factor clears the IC threshold; keeping all factors");
        kept = factors.channels.clone();
    }
    let input = factors
        .select_channels(&kept)?
        .with_return_channels(&returns)?;
    input.write_binary(&layout.features())?;
    let summary = FactorSummary {
        dates: input.n_dates(),
        kept,
        dropped_empty: pre.dropped,
        neutralized,
        notes,
        ic_dates,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    log::info!("kept {} of 360 factors", summary.kept.len());
    Ok(summary)
}

fn load_features(layout: &Layout) -> Result<FactorPanel> {
    require(&layout.features(), "factors")?;
    Ok(FactorPanel::read_binary(&layout.features())?)
}

/// Rolling train/validation/test windows over the feature calendar.
pub fn split(config: &RunConfig, layout: &Layout) -> Result<Vec<RollingSplit>> {
    let features = load_features(layout)?;
    let s = &config.splits;
    let splits = make_rolling_splits(&features.dates, s.train, s.validation, s.test, s.step)?;
    let dir = layout.stage("splits");
    create_dir(&dir)?;
    write_json(&layout.splits(), &splits)?;
    let mut w = csv::Writer::from_path(dir.join("splits.csv"))?;
    w.write_record([
        "split",
        "train_start",
        "train_end",
        "validation_start",
        "validation_end",
        "test_start",
        "test_end",
    ])?;
    for (i, sp) in splits.iter().enumerate() {
        w.write_record([
            i.to_string(),
            sp.train.start.to_string(),
            sp.train.end.to_string(),
            sp.validation.start.to_string(),
            sp.validation.end.to_string(),
            sp.test.start.to_string(),
            sp.test.end.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(splits)
}

fn load_splits(layout: &Layout) -> Result<Vec<RollingSplit>> {
    require(&layout.splits(), "split")?;
    read_json(&layout.splits())
}

/// The requested split indices, or all of them.
fn selected(splits: &[RollingSplit], only: Option<usize>) -> Result<Vec<usize>> {
    match only {
        Some(i) if i < splits.len() => Ok(vec![i]),
        Some(i) => bail!(stockformer::Error::Argument(format!(
            "split {i} does not exist ({} splits)",
            splits.len()
        ))),
        None => Ok((0..splits.len()).collect()),
    }
}

/// Windows of one split, grouped by role.
pub struct SplitData {
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
    pub train_returns: ReturnMatrix,
}

pub fn split_data(
    features: &FactorPanel,
    split: &RollingSplit,
    model: &ModelConfig,
) -> Result<SplitData> {
    let filters = WaveletFilterPair::by_name(&model.wavelet)?;
    let windows =
        |r: std::ops::Range<usize>| windows_for_range(features, &filters, model.t1, model.t2, r);
    let train = windows(split.train.range())?;
    if train.is_empty() {
        bail!(stockformer::Error::Argument(format!(
            "split starting {} has no complete training window",
            split.train.start
        )));
    }
    let r = split.train.range();
    let n = features.n_symbols();
    let values = features.channel(0)[r.start * n..r.end * n].to_vec();
    Ok(SplitData {
        train,
        validation: windows(split.validation.range())?,
        test: windows(split.test.range())?,
        train_returns: ReturnMatrix::from_values(
            features.dates[r].to_vec(),
            features.symbols.clone(),
            values,
        ),
    })
}

fn write_loss_log(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "lr",
        "train_total",
        "train_reg",
        "train_cla",
        "val_total",
        "val_reg",
        "val_cla",
    ])?;
    for e in &manifest.loss_log {
        let val = |f: fn(&LossBreakdown) -> f64| {
            e.val.as_ref().map(|v| f(v).to_string()).unwrap_or_default()
        };
        w.write_record([
            e.epoch.to_string(),
            e.lr.to_string(),
            e.train.total.to_string(),
            e.train.reg.to_string(),
            e.train.cla.to_string(),
            val(|v| v.total),
            val(|v| v.reg),
            val(|v| v.cla),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains one model per split and saves checkpoint, manifest and loss log.
pub fn train_splits(
    config: &RunConfig,
    layout: &Layout,
    only: Option<usize>,
) -> Result<Vec<RunManifest>> {
    let features = load_features(layout)?;
    let splits = load_splits(layout)?;
    let data_hash = sha256_hex(&fs::read(layout.features())?);
    let mut out = Vec::new();
    for i in selected(&splits, only)? {
        let data = split_data(&features, &splits[i], &config.model)?;
        let (spatial, constant) = spatial_embedding(&data.train_returns, &config.model)?;
        if !constant.is_empty() {
            log::warn!(
                "split {i}: constant return series for {}",
                constant.join(", ")
            );
        }
        let outcome = train(&config.model, &spatial, &data.train, &data.validation)
            .with_context(|| format!("training split {i}"))?;
        let dir = layout.split_dir("train", i);
        create_dir(&dir)?;
        outcome.store.save(&dir.join("model.ckpt"))?;
        let manifest = RunManifest::from_outcome(&outcome, data_hash.clone());
        manifest.save(&dir.join("manifest.json"))?;
        write_loss_log(&dir.join("loss_log.csv"), &manifest)?;
        log::info!(
            "split {i}: best epoch {} of {}, {} training windows",
            outcome.best_epoch,
            config.model.epochs,
            data.train.len()
        );
        out.push(manifest);
    }
    Ok(out)
}

/// One predicted cell joined with its realized outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    /// Last input date; predictions are known after this close.
    pub signal_date: NaiveDate,
    pub target_date: NaiveDate,
    pub horizon: usize,
    pub symbol: String,
    pub y_reg: f64,
    pub p_cla: f64,
    pub y_l_reg: f64,
    pub p_l_cla: f64,
    pub actual_return: f64,
    pub actual_label: f64,
}

pub fn prediction_rows(
    windows: &[Window],
    bundles: &[PredictionBundle],
    symbols: &[String],
) -> Vec<PredictionRow> {
    let mut rows = Vec::new();
    for (w, b) in windows.iter().zip(bundles) {
        let n = b.n_stocks;
        for h in 0..b.t2 {
            for (j, symbol) in symbols.iter().enumerate() {
                let c = h * n + j;
                rows.push(PredictionRow {
                    signal_date: *w.input_dates.last().expect("window has inputs"),
                    target_date: w.target_dates[h],
                    horizon: h,
                    symbol: symbol.clone(),
                    y_reg: b.y_reg[c],
                    p_cla: b.p_cla[c],
                    y_l_reg: b.y_l_reg[c],
                    p_l_cla: b.p_l_cla[c],
                    actual_return: w.y[c],
                    actual_label: w.labels[c],
                });
            }
        }
    }
    rows
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

fn load_checkpoint(layout: &Layout, split: usize) -> Result<(ParameterStore, RunManifest)> {
    let dir = layout.split_dir("train", split);
    require(&dir.join("model.ckpt"), "train")?;
    require(&dir.join("manifest.json"), "train")?;
    Ok((
        ParameterStore::load(&dir.join("model.ckpt"))?,
        RunManifest::load(&dir.join("manifest.json"))?,
    ))
}

/// Test-period predictions for each trained split.
pub fn predict(config: &RunConfig, layout: &Layout, only: Option<usize>) -> Result<usize> {
    let features = load_features(layout)?;
    let splits = load_splits(layout)?;
    let mut total = 0;
    for i in selected(&splits, only)? {
        let (store, manifest) = load_checkpoint(layout, i)?;
        if manifest.config != config.model {
            log::warn!("split {i}: checkpoint was trained with a different model config; using the checkpoint's");
        }
        let model = Model::new(
            manifest.config.clone(),
            manifest.n_stocks,
            manifest.n_channels,
        )?;
        let data = split_data(&features, &splits[i], &model.config)?;
        let bundles = predict_windows(&model, &store, &data.test)?;
        let rows = prediction_rows(&data.test, &bundles, &features.symbols);
        let dir = layout.split_dir("predict", i);
        create_dir(&dir)?;
        write_rows(&dir.join("predictions.csv"), &rows)?;
        total += rows.len();
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub confidence: ConfidenceReport,
    pub report: EvalReport,
    pub score_horizon: usize,
}

/// Score horizon traded by the backtest: a signal known after the close of
/// `d` is executed at the close of `d + 1`, so it earns the return of `d + 2`.
pub fn score_horizon(t2: usize) -> usize {
    1.min(t2 - 1)
}

/// Applies the output-selection rule, then scores each (signal date,
/// horizon) cross-section.
pub fn evaluate_rows(rows: &[PredictionRow], t2: usize) -> Result<(SplitEvaluation, ScoreTable)> {
    let probs: Vec<f64> = rows.iter().map(|r| r.p_cla).collect();
    let confidence = high_confidence_analysis(&probs, CONFIDENCE_THRESHOLD);
    let use_cla = confidence.selected_output == OutputChoice::Classification;
    let score = |r: &PredictionRow| if use_cla { r.p_cla } else { r.y_reg };

    let mut groups: BTreeMap<(NaiveDate, usize), Vec<&PredictionRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.signal_date, r.horizon))
            .or_default()
            .push(r);
    }
    let days: Vec<DailyPrediction> = groups
        .values()
        .map(|g| DailyPrediction {
            scores: g.iter().map(|r| score(r)).collect(),
            pred_labels: g
                .iter()
                .map(|r| {
                    if use_cla {
                        label_from_probability(r.p_cla)
                    } else {
                        label_from_return(r.y_reg)
                    }
                })
                .collect(),
            actual_returns: g.iter().map(|r| r.actual_return).collect(),
            actual_labels: g.iter().map(|r| r.actual_label).collect(),
        })
        .collect();
    let report = evaluate(&days)?;
    let horizon = score_horizon(t2);
    let mut scores = ScoreTable::default();
    for r in rows.iter().filter(|r| r.horizon == horizon) {
        scores.insert(r.signal_date, &r.symbol, score(r));
    }
    Ok((
        SplitEvaluation {
            confidence,
            report,
            score_horizon: horizon,
        },
        scores,
    ))
}

pub fn evaluate_splits(
    config: &RunConfig,
    layout: &Layout,
    only: Option<usize>,
) -> Result<Vec<SplitEvaluation>> {
    let splits = load_splits(layout)?;
    let mut out = Vec::new();
    for i in selected(&splits, only)? {
        let path = layout.split_dir("predict", i).join("predictions.csv");
        require(&path, "predict")?;
        let rows: Vec<PredictionRow> = read_rows(&path)?;
        if rows.is_empty() {
            bail!(stockformer::Error::Argument(format!(
                "split {i} has no test predictions"
            )));
        }
        let (evaluation, scores) = evaluate_rows(&rows, config.model.t2)?;
        let dir = layout.split_dir("evaluate", i);
        create_dir(&dir)?;
        evaluation.report.write_csv(&dir.join("eval.csv"))?;
        write_json(&dir.join("evaluation.json"), &evaluation)?;
        scores.write_csv(&dir.join("scores.csv"))?;
        out.push(evaluation);
    }
    Ok(out)
}

/// TopK-Dropout on each split's test scores against an equal-weight index.
pub fn backtest(
    config: &RunConfig,
    layout: &Layout,
    only: Option<usize>,
) -> Result<Vec<BenchmarkComparison>> {
    let panel = load_ingested(layout)?;
    let splits = load_splits(layout)?;
    let mut out = Vec::new();
    for i in selected(&splits, only)? {
        let path = layout.split_dir("evaluate", i).join("scores.csv");
        require(&path, "evaluate")?;
        let scores = ScoreTable::load_csv(&path)?;
        let series = run_topk_dropout(&scores, &panel, &config.strategy)?;
        let bench = equal_weight_benchmark(&panel, &series.dates)?;
        let cmp = compare_benchmark(&series, &bench, config.strategy.risk_free_rate)?;
        let dir = layout.split_dir("backtest", i);
        create_dir(&dir)?;
        series.write_net_value_csv(&dir.join("net_value.csv"))?;
        series.write_trades_csv(&dir.join("trades.csv"))?;
        bench.write_net_value_csv(&dir.join("benchmark.csv"))?;
        write_json(&dir.join("portfolio.json"), &cmp)?;
        if !series.events.is_empty() {
            fs::write(dir.join("events.txt"), series.events.join("\n"))?;
        }
        out.push(cmp);
    }
    Ok(out)
}

/// One split's row in the aggregated report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub split: String,
    pub test_start: String,
    pub test_end: String,
    pub ic: f64,
    pub icir: Option<f64>,
    pub rank_ic: f64,
    pub rank_icir: Option<f64>,
    pub directional_accuracy: f64,
    pub high_confidence_proportion: f64,
    pub output: OutputChoice,
    pub annualized_return: f64,
    pub annualized_volatility: f64,
    pub max_drawdown: f64,
    pub sharpe: Option<f64>,
    pub benchmark_annualized_return: f64,
    pub excess_annualized_return: f64,
}

pub const REPORT_COLUMNS: [&str; 16] = [
    "split",
    "test_start",
    "test_end",
    "ic",
    "icir",
    "rank_ic",
    "rank_icir",
    "directional_accuracy",
    "high_confidence_proportion",
    "output",
    "annualized_return",
    "annualized_volatility",
    "max_drawdown",
    "sharpe",
    "benchmark_annualized_return",
    "excess_annualized_return",
];

/// Collects every split's evaluation and backtest into `summary.csv` and
/// `summary.json`, and copies the net-value paths for plotting.
pub fn report(layout: &Layout) -> Result<Vec<ReportRow>> {
    let splits = load_splits(layout)?;
    let dir = layout.stage("report");
    create_dir(&dir)?;
    let mut rows = Vec::new();
    for (i, sp) in splits.iter().enumerate() {
        let eval_path = layout.split_dir("evaluate", i).join("evaluation.json");
        let bt_dir = layout.split_dir("backtest", i);
        require(&eval_path, "evaluate")?;
        require(&bt_dir.join("portfolio.json"), "backtest")?;
        let ev: SplitEvaluation = read_json(&eval_path)?;
        let cmp: BenchmarkComparison = read_json(&bt_dir.join("portfolio.json"))?;
        fs::copy(
            bt_dir.join("net_value.csv"),
            dir.join(format!("net_value_split_{i:02}.csv")),
        )?;
        fs::copy(
            bt_dir.join("benchmark.csv"),
            dir.join(format!("benchmark_split_{i:02}.csv")),
        )?;
        rows.push(ReportRow {
            split: i.to_string(),
            test_start: sp.test.start.to_string(),
            test_end: sp.test.end.to_string(),
            ic: ev.report.ic_mean,
            icir: ev.report.icir,
            rank_ic: ev.report.rank_ic_mean,
            rank_icir: ev.report.rank_icir,
            directional_accuracy: ev.report.directional_accuracy,
            high_confidence_proportion: ev.confidence.high_confidence_proportion,
            output: ev.confidence.selected_output,
            annualized_return: cmp.strategy.annualized_return,
            annualized_volatility: cmp.strategy.annualized_volatility,
            max_drawdown: cmp.strategy.max_drawdown,
            sharpe: cmp.strategy.sharpe,
            benchmark_annualized_return: cmp.benchmark.annualized_return,
            excess_annualized_return: cmp.excess_annualized_return,
        });
    }
    write_rows(&dir.join("summary.csv"), &rows)?;
    write_json(&dir.join("summary.json"), &rows)?;
    Ok(rows)
}

/// The hyperparameter grid: hidden size × layers × batch size × λ.
pub fn sweep_grid() -> Vec<(usize, usize, usize, f64)> {
    let mut grid = Vec::new();
    for d in [32, 64, 128, 256] {
        for layers in 1..=4 {
            for batch in [8, 16, 32, 64] {
                for lambda in [1.0, 1.5, 2.0, 2.5] {
                    grid.push((d, layers, batch, lambda));
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d_model: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub best_epoch: usize,
    pub val_total: f64,
    pub test_ic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub val_total: f64,
    pub val_reg: f64,
    pub val_cla: f64,
    pub ic: f64,
    pub rank_ic: f64,
    pub directional_accuracy: f64,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

/// Trains `config` on one split and scores the validation and test windows.
fn trial(
    config: &ModelConfig,
    data: &SplitData,
    symbols: &[String],
) -> Result<(TrainOutcome, LossBreakdown, SplitEvaluation)> {
    let (spatial, _) = spatial_embedding(&data.train_returns, config)?;
    let outcome = train(config, &spatial, &data.train, &data.validation)?;
    let eval_windows = if data.validation.is_empty() {
        &data.train
    } else {
        &data.validation
    };
    let val = evaluate_loss(
        &outcome.model,
        &outcome.store,
        eval_windows,
        Objective::Full,
    )?;
    let bundles = predict_windows(&outcome.model, &outcome.store, &data.test)?;
    let rows = prediction_rows(&data.test, &bundles, symbols);
    if rows.is_empty() {
        bail!(stockformer::Error::Argument(
            "split has no test windows".into()
        ));
    }
    let (evaluation, _) = evaluate_rows(&rows, config.t2)?;
    Ok((outcome, val, evaluation))
}

/// Runs the first `max_runs` grid points on split `split` in parallel.
pub fn sweep(
    config: &RunConfig,
    layout: &Layout,
    split: usize,
    max_runs: Option<usize>,
) -> Result<Vec<SweepRow>> {
    let features = load_features(layout)?;
    let splits = load_splits(layout)?;
    let i = selected(&splits, Some(split))?[0];
    let grid = sweep_grid();
    let n = max_runs.unwrap_or(grid.len()).min(grid.len());
    let pool = thread_pool(config.run.jobs)?;
    let rows: Vec<SweepRow> = pool.install(|| {
        grid[..n]
            .par_iter()
            .map(|&(d_model, layers, batch_size, lambda)| {
                let model = ModelConfig {
                    d_model,
                    layers,
                    batch_size,
                    lambda,
                    ..config.model.clone()
                };
                let data = split_data(&features, &splits[i], &model)?;
                let (outcome, val, evaluation) = trial(&model, &data, &features.symbols)?;
                Ok(SweepRow {
                    d_model,
                    layers,
                    batch_size,
                    lambda,
                    best_epoch: outcome.best_epoch,
                    val_total: val.total,
                    test_ic: evaluation.report.ic_mean,
                })
            })
            .collect::<Result<_>>()
    })?;
    let dir = layout.stage("sweep");
    create_dir(&dir)?;
    write_rows(&dir.join("results.csv"), &rows)?;
    Ok(rows)
}

/// Trains the full model and each single-component variant on split `split`.
/// Validation loss uses the full objective for every row.
pub fn ablate(config: &RunConfig, layout: &Layout, split: usize) -> Result<Vec<AblationRow>> {
    let features = load_features(layout)?;
    let splits = load_splits(layout)?;
    let i = selected(&splits, Some(split))?[0];
    let data = split_data(&features, &splits[i], &config.model)?;
    let pool = thread_pool(config.run.jobs)?;
    let variants = Ablation::variants();
    let rows: Vec<AblationRow> = pool.install(|| {
        variants
            .par_iter()
            .map(|(name, ablation)| {
                let model = ModelConfig {
                    ablation: *ablation,
                    ..config.model.clone()
                };
                let (_, val, evaluation) = trial(&model, &data, &features.symbols)?;
                Ok(AblationRow {
                    variant: name.to_string(),
                    val_total: val.total,
                    val_reg: val.reg,
                    val_cla: val.cla,
                    ic: evaluation.report.ic_mean,
                    rank_ic: evaluation.report.rank_ic_mean,
                    directional_accuracy: evaluation.report.directional_accuracy,
                })
            })
            .collect::<Result<_>>()
    })?;
    let dir = layout.stage("ablate");
    create_dir(&dir)?;
    write_rows(&dir.join("results.csv"), &rows)?;
    Ok(rows)
}
