//! The `jumpalloc` command line.
//!
//! Every subcommand reads a JSON [`RunConfig`] (or a [`SynthSpec`] for
//! `synth`), applies command-line overrides and writes its artifacts to the
//! output directory. CSV artifacts start with a `# config_sha256=... seed=...`
//! comment line; JSON artifacts carry `config_hash` and `seed` fields.
//!
//! Exit codes: 0 on success, 1 when a fit was degenerate, 2 on configuration
//! or data errors. Errors are reported on stderr as a JSON object.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::{
    evaluate_test, select_lambda, EngineKind, EngineRun, HmmEngineConfig, SplitSpec,
    WalkForwardConfig, HMM_REFIT_INTERVAL, JM_REFIT_INTERVAL,
};
use crate::error::{Error, Result};
use crate::features::{
    apply_standardizer, build_feature_set, fit_standardizer, StandardizationParams, FEATURE_NAMES,
    WARMUP,
};
use crate::hmm::{baum_welch_fit, smoothed_states, viterbi, Decoder, HmmConfig, HmmRecord};
use crate::jump_model::{self, estimate_transitions, FitRecord, JumpModelConfig, JumpPenalty};
use crate::market_data::{build_dataset, load_csv, CsvSchema, MarketDataset};
use crate::metrics::{format_table, MetricReport};
use crate::synth::{simulate_market, SynthSpec};

/// Location and column layout of one input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_format: Option<String>,
}

impl DataSource {
    fn schema(&self, default_value_column: &str) -> CsvSchema {
        let mut schema = CsvSchema::new(
            self.date_column.as_deref().unwrap_or("date"),
            self.value_column.as_deref().unwrap_or(default_value_column),
        );
        if let Some(fmt) = &self.date_format {
            schema.date_format = fmt.clone();
        }
        schema
    }
}

fn default_cost_bps() -> f64 {
    10.0
}

fn default_lookback() -> usize {
    2000
}

fn default_n_states() -> usize {
    2
}

fn default_restarts() -> usize {
    10
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Declarative description of a run. Relative paths are resolved against
/// the directory of the config file. Yields are annual decimals (0.05 = 5%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Index closes; value column defaults to `close`.
    pub prices: DataSource,
    /// Annual risk-free yields; value column defaults to `yield`.
    pub yields: DataSource,
    pub split: SplitSpec,
    #[serde(default = "default_engine")]
    pub engine: EngineKind,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default = "default_cost_bps")]
    pub cost_bps: f64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to 126 days for the jump model and 21 for the HMM.
    #[serde(default)]
    pub refit_every: Option<usize>,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    #[serde(default = "default_n_states")]
    pub n_states: usize,
    #[serde(default = "default_restarts")]
    pub n_restarts: usize,
    #[serde(default)]
    pub hmm: HmmEngineConfig,
    /// Also run the HMM strategy over the test period in `backtest`.
    #[serde(default)]
    pub hmm_baseline: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_engine() -> EngineKind {
    EngineKind::JumpModel
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.walk_forward(self.engine)?.validate()?;
        if let Some(l) = self.lambda {
            JumpPenalty::new(l)?;
        }
        if let Some(grid) = &self.grid {
            if grid.is_empty() {
                return Err(Error::invalid("empty jump penalty grid"));
            }
            for &l in grid {
                JumpPenalty::new(l)?;
            }
        }
        Ok(())
    }

    /// Walk-forward settings for `engine`; the penalty is `lambda` or zero.
    pub fn walk_forward(&self, engine: EngineKind) -> Result<WalkForwardConfig> {
        if !self.cost_bps.is_finite() || self.cost_bps < 0.0 {
            return Err(Error::invalid("cost_bps must be finite and >= 0"));
        }
        let refit = match (engine, self.refit_every) {
            (e, Some(r)) if e == self.engine => r,
            (EngineKind::JumpModel, _) => JM_REFIT_INTERVAL,
            (EngineKind::Hmm, _) => HMM_REFIT_INTERVAL,
        };
        Ok(WalkForwardConfig {
            lookback_days: self.lookback,
            refit_interval_days: refit,
            n_states: self.n_states,
            penalty: JumpPenalty::new(self.lambda.unwrap_or(0.0))?,
            cost_per_side: self.cost_bps / 10_000.0,
            engine,
            hmm: self.hmm.clone(),
            n_restarts: self.n_restarts,
            seed: self.seed,
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Jm,
    Hmm,
}

impl From<EngineArg> for EngineKind {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Jm => EngineKind::JumpModel,
            EngineArg::Hmm => EngineKind::Hmm,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// JSON run configuration (a synthetic market spec for `synth`).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub engine: Option<EngineArg>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma-separated jump penalties.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub cost_bps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub refit_every: Option<usize>,
    #[arg(long)]
    pub lookback: Option<usize>,
    /// Output directory (relative to the working directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(
    name = "jumpalloc",
    version,
    about = "Regime-switching allocation with statistical jump models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align prices and yields into dataset.csv.
    Ingest(Overrides),
    /// Write the raw feature matrix to features.csv.
    Features(Overrides),
    /// Fit one model on the training period and write fit.json.
    Fit(Overrides),
    /// Grid-search the jump penalty on the validation period.
    Cv(Overrides),
    /// Out-of-sample backtest over the test period.
    Backtest(Overrides),
    /// Simulate a synthetic market from a spec file.
    Synth(Overrides),
    /// Print the metric table of a finished backtest.
    Report(Overrides),
}

/// Whether a run finished cleanly or with a degenerate fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Degenerate,
}

struct Loaded {
    config: RunConfig,
    base: PathBuf,
    out: PathBuf,
    hash: String,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn load_config(o: &Overrides) -> Result<Loaded> {
    let mut config: RunConfig = serde_json::from_str(&read_text(&o.config)?)?;
    if let Some(e) = o.engine {
        config.engine = e.into();
    }
    if let Some(l) = o.lambda {
        config.lambda = Some(l);
    }
    if let Some(g) = &o.grid {
        config.grid = Some(g.clone());
    }
    if let Some(c) = o.cost_bps {
        config.cost_bps = c;
    }
    if let Some(s) = o.seed {
        config.seed = s;
    }
    if let Some(r) = o.refit_every {
        config.refit_every = Some(r);
    }
    if let Some(l) = o.lookback {
        config.lookback = l;
    }
    config.validate()?;
    let base = base_dir(&o.config);
    let out = o.out.clone().unwrap_or_else(|| base.join(&config.out));
    Ok(Loaded {
        hash: config.hash(),
        config,
        base,
        out,
    })
}

impl Loaded {
    fn dataset(&self) -> Result<MarketDataset> {
        let prices = load_csv(
            self.base.join(&self.config.prices.path),
            &self.config.prices.schema("close"),
        )?;
        let yields = load_csv(
            self.base.join(&self.config.yields.path),
            &self.config.yields.schema("yield"),
        )?;
        build_dataset(&prices, &yields)
    }

    fn header(&self) -> String {
        format!("# config_sha256={} seed={}\n", self.hash, self.config.seed)
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(dir, name, &text)
}

/// CSV text from a header comment, column names and rows of cells.
fn csv_text(header: &str, columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::from(header);
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn cmd_ingest(o: &Overrides) -> Result<Outcome> {
    let run = load_config(o)?;
    let ds = run.dataset()?;
    let rows = (0..ds.len()).map(|i| {
        vec![
            ds.dates()[i].to_string(),
            ds.index_prices().values()[i].to_string(),
            ds.index_returns().values()[i].to_string(),
            ds.log_returns().values()[i].to_string(),
            ds.risk_free_daily().values()[i].to_string(),
        ]
    });
    let text = csv_text(
        &run.header(),
        &["date", "close", "return", "log_return", "rf_daily"],
        rows,
    );
    write_file(&run.out, "dataset.csv", &text)?;
    Ok(Outcome::Ok)
}

fn cmd_features(o: &Overrides) -> Result<Outcome> {
    let run = load_config(o)?;
    let ds = run.dataset()?;
    let fm = build_feature_set(ds.log_returns())?;
    let mut columns = vec!["date"];
    columns.extend(FEATURE_NAMES);
    let rows = (fm.warmup()..fm.n_rows()).map(|i| {
        let mut row = vec![fm.dates()[i].to_string()];
        row.extend(fm.values().row(i).iter().map(f64::to_string));
        row
    });
    write_file(
        &run.out,
        "features.csv",
        &csv_text(&run.header(), &columns, rows),
    )?;
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct DatedRun {
    state: usize,
    start: NaiveDate,
    end: NaiveDate,
}

fn dated_runs(dates: &[NaiveDate], states: &[usize]) -> Vec<DatedRun> {
    jump_model::run_lengths(states)
        .into_iter()
        .map(|r| DatedRun {
            state: r.state,
            start: dates[r.start],
            end: dates[r.end],
        })
        .collect()
}

#[derive(Serialize)]
#[serde(tag = "engine", rename_all = "lowercase")]
enum FittedModel {
    #[serde(rename = "jm")]
    JumpModel {
        standardization: StandardizationParams,
        model: FitRecord,
        transitions: Vec<Vec<f64>>,
    },
    Hmm {
        decoder: Decoder,
        model: HmmRecord,
    },
}

#[derive(Serialize)]
struct FitOutput {
    config_hash: String,
    seed: u64,
    window_start: NaiveDate,
    window_end: NaiveDate,
    #[serde(flatten)]
    fitted: FittedModel,
    regimes: Vec<DatedRun>,
}

/// Fits on the last `lookback` days up to the end of the training period.
fn cmd_fit(o: &Overrides) -> Result<Outcome> {
    let run = load_config(o)?;
    let ds = run.dataset()?;
    let cfg = &run.config;
    let end = ds.dates().partition_point(|&d| d <= cfg.split.train_end);
    let earliest = match cfg.engine {
        EngineKind::JumpModel => WARMUP,
        EngineKind::Hmm => 0,
    };
    let start = end.saturating_sub(cfg.lookback).max(earliest);
    if end <= start {
        return Err(Error::InsufficientHistory {
            needed: earliest + 1,
            available: end,
        });
    }
    let window = start..end;
    let dates = &ds.dates()[window.clone()];
    let returns = &ds.log_returns().values()[window.clone()];

    let (fitted, states, degenerate) = match cfg.engine {
        EngineKind::JumpModel => {
            let lambda = cfg
                .lambda
                .ok_or_else(|| Error::invalid("fit with the jump model needs a lambda"))?;
            let fm = build_feature_set(ds.log_returns())?;
            let params = fit_standardizer(&fm, window.clone())?;
            let z = apply_standardizer(&fm, &params, window.clone())?;
            let jm = JumpModelConfig {
                n_restarts: cfg.n_restarts,
                ..JumpModelConfig::new(cfg.n_states, JumpPenalty::new(lambda)?, cfg.seed)
            };
            let fit = jump_model::fit(z.values(), &jm, Some(returns))?;
            let transitions = estimate_transitions(&fit.states, fit.n_states())?.matrix;
            let degenerate = fit.effective_states < fit.n_states();
            let states = fit.states.clone();
            let fitted = FittedModel::JumpModel {
                standardization: params,
                model: FitRecord::from(&fit),
                transitions,
            };
            (fitted, states, degenerate)
        }
        EngineKind::Hmm => {
            let hmm_cfg = HmmConfig {
                n_states: cfg.n_states,
                n_restarts: cfg.n_restarts,
                seed: cfg.seed,
                ..HmmConfig::default()
            };
            let model = baum_welch_fit(returns, &hmm_cfg)?;
            let states = match cfg.hmm.decoder {
                Decoder::Smoothed => smoothed_states(&model, returns)?.0,
                Decoder::Viterbi => viterbi(&model, returns)?,
            };
            let populated = (0..cfg.n_states).filter(|k| states.contains(k)).count();
            let fitted = FittedModel::Hmm {
                decoder: cfg.hmm.decoder,
                model: HmmRecord::new(&model, cfg.seed, &states),
            };
            (fitted, states, populated < cfg.n_states)
        }
    };
    let output = FitOutput {
        config_hash: run.hash.clone(),
        seed: cfg.seed,
        window_start: dates[0],
        window_end: dates[dates.len() - 1],
        fitted,
        regimes: dated_runs(dates, &states),
    };
    write_json(&run.out, "fit.json", &output)?;
    Ok(if degenerate {
        Outcome::Degenerate
    } else {
        Outcome::Ok
    })
}

fn metric_cells(report: &MetricReport) -> Vec<String> {
    report
        .values()
        .iter()
        .map(|v| v.map_or_else(String::new, |x| x.to_string()))
        .collect()
}

#[derive(Serialize)]
struct ChosenLambda {
    config_hash: String,
    seed: u64,
    lambda: f64,
    validation_sharpe: Option<f64>,
    validation_start: NaiveDate,
    validation_end: NaiveDate,
}

fn cmd_cv(o: &Overrides) -> Result<Outcome> {
    let run = load_config(o)?;
    let ds = run.dataset()?;
    let cfg = &run.config;
    let grid = cfg
        .grid
        .clone()
        .ok_or_else(|| Error::invalid("cv needs a lambda grid"))?;
    let wf = run.config.walk_forward(EngineKind::JumpModel)?;
    let selection = select_lambda(&ds, &wf, &grid, &cfg.split)?;

    let columns = [
        "lambda",
        "ann_return",
        "ann_vol",
        "sharpe",
        "downside_dev",
        "sortino",
        "max_drawdown",
        "calmar",
        "avg_daily_turnover",
        "n_reallocations",
        "degenerate_refits",
    ];
    let rows = selection.table.iter().map(|c| {
        let mut row = vec![c.lambda.to_string()];
        row.extend(metric_cells(&c.report));
        row.push(c.n_reallocations.to_string());
        row.push(c.degenerate_refits.to_string());
        row
    });
    write_file(
        &run.out,
        "cv_table.csv",
        &csv_text(&run.header(), &columns, rows),
    )?;

    let best = selection
        .table
        .iter()
        .find(|c| c.lambda == selection.chosen.value())
        .expect("chosen lambda is in the table");
    let span = cfg.split.validation();
    write_json(
        &run.out,
        "chosen_lambda.json",
        &ChosenLambda {
            config_hash: run.hash.clone(),
            seed: cfg.seed,
            lambda: best.lambda,
            validation_sharpe: best.report.sharpe,
            validation_start: span.start,
            validation_end: span.end,
        },
    )?;
    Ok(if best.degenerate_refits > 0 {
        Outcome::Degenerate
    } else {
        Outcome::Ok
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSummary {
    pub engine: EngineKind,
    pub lambda: Option<f64>,
    pub settings: WalkForwardConfig,
    pub metrics: MetricReport,
    pub n_reallocations: usize,
    pub degenerate_refits: usize,
    pub refit_dates: Vec<NaiveDate>,
}

impl EngineSummary {
    fn new(run: &EngineRun, settings: &WalkForwardConfig) -> Self {
        EngineSummary {
            engine: settings.engine,
            lambda: (settings.engine == EngineKind::JumpModel).then(|| settings.penalty.value()),
            settings: settings.clone(),
            metrics: run.report.clone(),
            n_reallocations: run.result.n_reallocations,
            degenerate_refits: run.result.degenerate_refits,
            refit_dates: run.result.refit_dates.clone(),
        }
    }
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestOutput {
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    /// Set when the penalty came from a validation grid search.
    pub selected_by_cv: bool,
    pub strategy: EngineSummary,
    pub benchmark: MetricReport,
    pub baseline: Option<EngineSummary>,
}

fn cmd_backtest(o: &Overrides) -> Result<Outcome> {
    let run = load_config(o)?;
    let ds = run.dataset()?;
    let cfg = &run.config;
    let mut wf = cfg.walk_forward(cfg.engine)?;
    let mut selected_by_cv = false;
    if cfg.engine == EngineKind::JumpModel && cfg.lambda.is_none() {
        let grid = cfg.grid.as_ref().ok_or_else(|| {
            Error::invalid("backtest with the jump model needs a lambda or a grid")
        })?;
        wf.penalty = select_lambda(&ds, &wf, grid, &cfg.split)?.chosen;
        selected_by_cv = true;
    }
    let baseline_cfg = (cfg.hmm_baseline && cfg.engine == EngineKind::JumpModel)
        .then(|| cfg.walk_forward(EngineKind::Hmm))
        .transpose()?;
    let eval = evaluate_test(&ds, &wf, &cfg.split, baseline_cfg.as_ref())?;
    let strategy = &eval.strategy.result;

    let equity_rows = strategy
        .dates
        .iter()
        .zip(strategy.index_equity())
        .zip(&strategy.equity_curve)
        .map(|((d, idx), s)| vec![d.to_string(), idx.to_string(), s.to_string()]);
    write_file(
        &run.out,
        "equity.csv",
        &csv_text(
            &run.header(),
            &["date", "index_equity", "strategy_equity"],
            equity_rows,
        ),
    )?;
    let regime_rows = strategy
        .regime_intervals
        .iter()
        .map(|r| vec![r.start.to_string(), r.end.to_string()]);
    write_file(
        &run.out,
        "regimes.csv",
        &csv_text(&run.header(), &["start", "end"], regime_rows),
    )?;

    let degenerate = strategy.degenerate_refits > 0;
    let output = BacktestOutput {
        config_hash: run.hash.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        test_start: strategy.dates[0],
        test_end: strategy.dates[strategy.dates.len() - 1],
        selected_by_cv,
        strategy: EngineSummary::new(&eval.strategy, &wf),
        benchmark: eval.benchmark,
        baseline: eval
            .baseline
            .as_ref()
            .zip(baseline_cfg.as_ref())
            .map(|(r, c)| EngineSummary::new(r, c)),
    };
    write_json(&run.out, "result.json", &output)?;
    Ok(if degenerate {
        Outcome::Degenerate
    } else {
        Outcome::Ok
    })
}

/// Synthetic prices, yields and true states, in the ingestible CSV layout.
fn cmd_synth(o: &Overrides) -> Result<Outcome> {
    let mut spec: SynthSpec = serde_json::from_str(&read_text(&o.config)?)?;
    if let Some(seed) = o.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let canonical = serde_json::to_string(&spec)?;
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    let header = format!("# config_sha256={hash} seed={}\n", spec.seed);
    let out = o
        .out
        .clone()
        .unwrap_or_else(|| base_dir(&o.config).join("out"));

    let market = simulate_market(&spec)?;
    let series_rows = |s: &crate::market_data::AlignedSeries| {
        s.iter()
            .map(|(d, v)| vec![d.to_string(), v.to_string()])
            .collect::<Vec<_>>()
    };
    write_file(
        &out,
        "prices.csv",
        &csv_text(&header, &["date", "close"], series_rows(&market.prices)),
    )?;
    write_file(
        &out,
        "yields.csv",
        &csv_text(&header, &["date", "yield"], series_rows(&market.yields)),
    )?;
    let state_rows = market.prices.dates()[1..]
        .iter()
        .zip(&market.states)
        .map(|(d, s)| vec![d.to_string(), s.to_string()]);
    write_file(
        &out,
        "states.csv",
        &csv_text(&header, &["date", "state"], state_rows),
    )?;
    Ok(Outcome::Ok)
}

fn cmd_report(o: &Overrides) -> Result<Outcome> {
    let run = load_config(o)?;
    let path = run.out.join("result.json");
    let result: BacktestOutput = serde_json::from_str(&read_text(&path)?)?;
    let strategy_name = match result.strategy.engine {
        EngineKind::JumpModel => "JM",
        EngineKind::Hmm => "HMM",
    };
    let mut columns: Vec<(&str, &MetricReport)> = vec![
        (strategy_name, &result.strategy.metrics),
        ("Buy&Hold", &result.benchmark),
    ];
    if let Some(b) = &result.baseline {
        columns.push(("HMM", &b.metrics));
    }
    let mut text = format!(
        "test period {} to {}, config {}\n",
        result.test_start,
        result.test_end,
        &result.config_hash[..12]
    );
    if let Some(l) = result.strategy.lambda {
        let _ = writeln!(text, "lambda {l}");
    }
    text.push_str(&format_table(&columns));
    print!("{text}");
    write_file(&run.out, "report.txt", &text)?;
    Ok(Outcome::Ok)
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Ingest(o) => cmd_ingest(o),
        Command::Features(o) => cmd_features(o),
        Command::Fit(o) => cmd_fit(o),
        Command::Cv(o) => cmd_cv(o),
        Command::Backtest(o) => cmd_backtest(o),
        Command::Synth(o) => cmd_synth(o),
        Command::Report(o) => cmd_report(o),
    }
}

#[derive(Serialize)]
struct ErrorReport {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<PathBuf>,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::MalformedRow { .. } | Error::DuplicateDate(_) | Error::NonFiniteValue { .. } => {
            "malformed_data"
        }
        Error::NonPositivePrice { .. } | Error::EmptyIntersection => "invalid_data",
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::InsufficientHistory { .. } => "insufficient_history",
        Error::ZeroVariance { .. } | Error::TooFewDistinctRows { .. } => "degenerate_data",
        Error::NumericalFailure(_) => "numerical_failure",
        Error::Json(_) => "invalid_json",
    }
}

/// Machine-readable error line for stderr.
pub fn error_json(e: &Error) -> String {
    let report = ErrorReport {
        error: error_kind(e),
        message: e.to_string(),
        path: match e {
            Error::Io { path, .. } => Some(path.clone()),
            _ => None,
        },
    };
    serde_json::to_string(&report).expect("error report serializes")
}

pub fn main_with(cli: &Cli) -> ExitCode {
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Degenerate) => {
            eprintln!(
                r#"{{"warning":"degenerate_fit","message":"a fit produced fewer populated states than requested"}}"#
            );
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(2)
        }
    }
}
