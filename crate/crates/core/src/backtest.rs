//! Walk-forward regime-switching backtest.
//!
//! At the close of each day `t` a regime engine reports the current regime
//! using data up to `t` only. That label is the forecast for day `t + 1`:
//! a high-volatility forecast (label 1) moves the whole portfolio into the
//! risk-free asset, otherwise it is fully invested in the index. Every
//! change of weight pays `cost_per_side` times the absolute weight change
//! on the day the new weight takes effect.
//!
//! Engines are refitted every `refit_interval_days` trading days on the
//! trailing `lookback_days` window, starting at the close of the day before
//! the evaluation span. Between refits they are updated online with frozen
//! parameters.

use std::ops::Range;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    apply_standardizer, build_feature_set, fit_standardizer, FeatureMatrix, StandardizationParams,
    WARMUP,
};
use crate::hmm::{baum_welch_fit, Decoder, HmmConfig, HmmFilter, MedianFilter};
use crate::jump_model::{self, JumpModelConfig, JumpPenalty, OnlineDecoder};
use crate::market_data::MarketDataset;
use crate::metrics::{performance_report, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    #[serde(rename = "jm")]
    JumpModel,
    Hmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmEngineConfig {
    /// Odd window of the causal majority filter on HMM labels.
    pub median_window: usize,
    pub decoder: Decoder,
}

impl Default for HmmEngineConfig {
    fn default() -> Self {
        HmmEngineConfig {
            median_window: 5,
            decoder: Decoder::Smoothed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardConfig {
    pub lookback_days: usize,
    pub refit_interval_days: usize,
    pub n_states: usize,
    pub penalty: JumpPenalty,
    pub cost_per_side: f64,
    pub engine: EngineKind,
    pub hmm: HmmEngineConfig,
    pub n_restarts: usize,
    pub seed: u64,
}

/// Half a year of trading days.
pub const JM_REFIT_INTERVAL: usize = 126;
/// Roughly one month of trading days.
pub const HMM_REFIT_INTERVAL: usize = 21;

impl WalkForwardConfig {
    pub fn jump_model(penalty: JumpPenalty) -> Self {
        WalkForwardConfig {
            lookback_days: 2000,
            refit_interval_days: JM_REFIT_INTERVAL,
            n_states: 2,
            penalty,
            cost_per_side: 0.0010,
            engine: EngineKind::JumpModel,
            hmm: HmmEngineConfig::default(),
            n_restarts: 10,
            seed: 0,
        }
    }

    pub fn hmm() -> Self {
        WalkForwardConfig {
            refit_interval_days: HMM_REFIT_INTERVAL,
            engine: EngineKind::Hmm,
            ..Self::jump_model(JumpPenalty::new(0.0).expect("zero is a valid penalty"))
        }
    }

    pub fn with_penalty(&self, penalty: JumpPenalty) -> Self {
        WalkForwardConfig {
            penalty,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback_days < 252 {
            return Err(Error::invalid("lookback must be at least 252 days"));
        }
        if self.refit_interval_days == 0 {
            return Err(Error::invalid("refit interval must be at least 1 day"));
        }
        if !self.cost_per_side.is_finite() || self.cost_per_side < 0.0 {
            return Err(Error::invalid("cost per side must be finite and >= 0"));
        }
        if self.n_states != 2 {
            return Err(Error::invalid(
                "the allocation strategy uses exactly two states",
            ));
        }
        if self.n_restarts == 0 {
            return Err(Error::invalid("n_restarts must be at least 1"));
        }
        if self.hmm.median_window == 0 || self.hmm.median_window.is_multiple_of(2) {
            return Err(Error::invalid("median window must be odd"));
        }
        Ok(())
    }

    /// Observations needed before the first day of an evaluation span.
    pub fn required_history(&self) -> usize {
        match self.engine {
            EngineKind::JumpModel => self.lookback_days + WARMUP,
            EngineKind::Hmm => self.lookback_days,
        }
    }
}

/// Inclusive date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateSpan {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateSpan {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::invalid(format!(
                "span ends {end} before it starts {start}"
            )));
        }
        Ok(DateSpan { start, end })
    }

    /// Dataset day indices inside the span.
    fn resolve(&self, dates: &[NaiveDate]) -> Result<Range<usize>> {
        let first = dates.partition_point(|&d| d < self.start);
        let end = dates.partition_point(|&d| d <= self.end);
        if first >= end {
            return Err(Error::invalid(format!(
                "no trading days between {} and {}",
                self.start, self.end
            )));
        }
        Ok(first..end)
    }
}

/// Single time-series split into training, validation and test periods.
/// Validation covers `(train_end, validation_end]`, test covers
/// `(validation_end, test_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_end: NaiveDate,
    pub validation_end: NaiveDate,
    pub test_end: NaiveDate,
}

impl SplitSpec {
    pub fn new(
        train_end: NaiveDate,
        validation_end: NaiveDate,
        test_end: NaiveDate,
    ) -> Result<Self> {
        let split = SplitSpec {
            train_end,
            validation_end,
            test_end,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_end < self.validation_end && self.validation_end < self.test_end) {
            return Err(Error::invalid("split dates must be strictly increasing"));
        }
        Ok(())
    }

    pub fn validation(&self) -> DateSpan {
        DateSpan {
            start: self.train_end.succ_opt().expect("date in range"),
            end: self.validation_end,
        }
    }

    pub fn test(&self) -> DateSpan {
        DateSpan {
            start: self.validation_end.succ_opt().expect("date in range"),
            end: self.test_end,
        }
    }
}

/// Data an engine may read. Implementations must only touch indices up to
/// the day they are asked about.
pub struct EngineContext<'a> {
    pub dataset: &'a MarketDataset,
    pub features: Option<&'a FeatureMatrix>,
}

impl EngineContext<'_> {
    pub fn log_returns(&self) -> &[f64] {
        self.dataset.log_returns().values()
    }
}

/// Online regime labelling between two refits.
pub trait Nowcaster {
    /// Label for `day`. Called once per day, in increasing order, starting
    /// at the refit day.
    fn nowcast(&mut self, ctx: &EngineContext<'_>, day: usize) -> Result<usize>;
}

pub enum Refit {
    Model(Box<dyn Nowcaster>),
    /// No usable two-state model; the previous label is held.
    Degenerate,
}

pub trait RegimeEngine {
    /// Whether [`EngineContext::features`] must be populated.
    fn needs_features(&self) -> bool {
        false
    }

    /// Fits on `window` (the last index is the refit day).
    fn refit(&self, ctx: &EngineContext<'_>, window: Range<usize>) -> Result<Refit>;

    /// Filter applied to the raw label sequence, if any.
    fn label_filter(&self) -> Option<MedianFilter> {
        None
    }
}

/// Jump model on standardized features with online state inference.
pub struct JumpModelEngine {
    pub config: JumpModelConfig,
}

struct JumpModelNowcaster {
    decoder: OnlineDecoder,
    params: StandardizationParams,
    next_day: usize,
}

impl Nowcaster for JumpModelNowcaster {
    fn nowcast(&mut self, ctx: &EngineContext<'_>, day: usize) -> Result<usize> {
        if day != self.next_day {
            return Err(Error::invalid(format!(
                "nowcast for day {day}, expected {}",
                self.next_day
            )));
        }
        let features = ctx
            .features
            .ok_or_else(|| Error::invalid("jump model needs features"))?;
        let row = features.values().row(day).to_vec();
        let z = ndarray::Array1::from(self.params.transform_row(&row));
        self.next_day += 1;
        Ok(self.decoder.push(z.view()))
    }
}

impl RegimeEngine for JumpModelEngine {
    fn needs_features(&self) -> bool {
        true
    }

    fn refit(&self, ctx: &EngineContext<'_>, window: Range<usize>) -> Result<Refit> {
        let features = ctx
            .features
            .ok_or_else(|| Error::invalid("jump model needs features"))?;
        let params = match fit_standardizer(features, window.clone()) {
            Ok(p) => p,
            Err(Error::ZeroVariance { .. }) => return Ok(Refit::Degenerate),
            Err(e) => return Err(e),
        };
        let z = apply_standardizer(features, &params, window.clone())?;
        let returns = &ctx.log_returns()[window.clone()];
        let fit = jump_model::fit(z.values(), &self.config, Some(returns))?;
        if fit.effective_states < self.config.n_states {
            return Ok(Refit::Degenerate);
        }
        let mut decoder = OnlineDecoder::new(fit.centroids, self.config.penalty);
        let history = z.values();
        for row in history.rows().into_iter().take(history.nrows() - 1) {
            decoder.push(row);
        }
        Ok(Refit::Model(Box::new(JumpModelNowcaster {
            decoder,
            params,
            next_day: window.end - 1,
        })))
    }
}

/// Gaussian HMM on log returns, decoded causally and median filtered.
pub struct HmmEngine {
    pub config: HmmConfig,
    pub settings: HmmEngineConfig,
}

struct HmmNowcaster {
    filter: HmmFilter,
    next_day: usize,
}

impl Nowcaster for HmmNowcaster {
    fn nowcast(&mut self, ctx: &EngineContext<'_>, day: usize) -> Result<usize> {
        if day != self.next_day {
            return Err(Error::invalid(format!(
                "nowcast for day {day}, expected {}",
                self.next_day
            )));
        }
        self.next_day += 1;
        self.filter.push(ctx.log_returns()[day])
    }
}

impl RegimeEngine for HmmEngine {
    fn refit(&self, ctx: &EngineContext<'_>, window: Range<usize>) -> Result<Refit> {
        let returns = &ctx.log_returns()[window.clone()];
        let model = baum_welch_fit(returns, &self.config)?;
        let mut filter = HmmFilter::new(model, self.settings.decoder)?;
        for &r in &returns[..returns.len() - 1] {
            filter.push(r)?;
        }
        Ok(Refit::Model(Box::new(HmmNowcaster {
            filter,
            next_day: window.end - 1,
        })))
    }

    fn label_filter(&self) -> Option<MedianFilter> {
        MedianFilter::new(self.settings.median_window).ok()
    }
}

/// Engine replaying predetermined labels, indexed by dataset day. Useful for
/// what-if accounting and for testing the allocation layer in isolation.
pub struct ScriptedEngine {
    pub labels: Vec<usize>,
}

impl ScriptedEngine {
    pub fn constant(label: usize, n_days: usize) -> Self {
        ScriptedEngine {
            labels: vec![label; n_days],
        }
    }
}

struct ScriptedNowcaster(Vec<usize>);

impl Nowcaster for ScriptedNowcaster {
    fn nowcast(&mut self, _ctx: &EngineContext<'_>, day: usize) -> Result<usize> {
        self.0
            .get(day)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no scripted label for day {day}")))
    }
}

impl RegimeEngine for ScriptedEngine {
    fn refit(&self, _ctx: &EngineContext<'_>, _window: Range<usize>) -> Result<Refit> {
        Ok(Refit::Model(Box::new(ScriptedNowcaster(
            self.labels.clone(),
        ))))
    }
}

pub fn engine_for(config: &WalkForwardConfig) -> Box<dyn RegimeEngine + Send + Sync> {
    match config.engine {
        EngineKind::JumpModel => Box::new(JumpModelEngine {
            config: JumpModelConfig {
                n_states: config.n_states,
                penalty: config.penalty,
                n_restarts: config.n_restarts,
                max_iter: 300,
                seed: config.seed,
            },
        }),
        EngineKind::Hmm => Box::new(HmmEngine {
            config: HmmConfig {
                n_states: config.n_states,
                n_restarts: config.n_restarts,
                seed: config.seed,
                ..HmmConfig::default()
            },
            settings: config.hmm.clone(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeInterval {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub dates: Vec<NaiveDate>,
    /// Regime forecast for each day, made at the previous close.
    pub forecasts: Vec<usize>,
    /// Index weight held during each day.
    pub weights: Vec<f64>,
    /// Weight held before the first day.
    pub initial_weight: f64,
    pub index_returns: Vec<f64>,
    pub risk_free: Vec<f64>,
    pub gross_returns: Vec<f64>,
    pub net_returns: Vec<f64>,
    pub equity_curve: Vec<f64>,
    pub cost_per_side: f64,
    /// Maximal runs of days with a high-volatility forecast.
    pub regime_intervals: Vec<RegimeInterval>,
    /// Closes at which the engine was refitted.
    pub refit_dates: Vec<NaiveDate>,
    pub n_reallocations: usize,
    /// Refits that produced no usable two-state model.
    pub degenerate_refits: usize,
}

impl BacktestResult {
    pub fn report(&self) -> Result<MetricReport> {
        performance_report(
            &self.dates,
            &self.net_returns,
            &self.risk_free,
            Some(&self.weights),
        )
    }

    /// Buy-and-hold index statistics over the same days.
    pub fn benchmark_report(&self) -> Result<MetricReport> {
        let ones = vec![1.0; self.dates.len()];
        performance_report(
            &self.dates,
            &self.index_returns,
            &self.risk_free,
            Some(&ones),
        )
    }

    /// Index growth of one unit over the same days.
    pub fn index_equity(&self) -> Vec<f64> {
        let mut level = 1.0;
        self.index_returns
            .iter()
            .map(|r| {
                level *= 1.0 + r;
                level
            })
            .collect()
    }
}

fn intervals(dates: &[NaiveDate], forecasts: &[usize]) -> Vec<RegimeInterval> {
    jump_model::run_lengths(forecasts)
        .into_iter()
        .filter(|run| run.state == 1)
        .map(|run| RegimeInterval {
            start: dates[run.start],
            end: dates[run.end],
        })
        .collect()
}

/// Runs the strategy over `span` with the engine described by `config`.
pub fn run_walk_forward(
    dataset: &MarketDataset,
    config: &WalkForwardConfig,
    span: DateSpan,
) -> Result<BacktestResult> {
    config.validate()?;
    let engine = engine_for(config);
    run_with_engine(dataset, engine.as_ref(), config, span)
}

/// Runs the strategy with a caller-supplied engine. Only the lookback,
/// refit interval and cost settings of `config` are used.
pub fn run_with_engine(
    dataset: &MarketDataset,
    engine: &dyn RegimeEngine,
    config: &WalkForwardConfig,
    span: DateSpan,
) -> Result<BacktestResult> {
    let days = span.resolve(dataset.dates())?;
    let needed = if engine.needs_features() {
        config.lookback_days + WARMUP
    } else {
        config.lookback_days
    };
    if days.start < needed {
        return Err(Error::InsufficientHistory {
            needed,
            available: days.start,
        });
    }
    let features = if engine.needs_features() {
        Some(build_feature_set(dataset.log_returns())?)
    } else {
        None
    };
    let ctx = EngineContext {
        dataset,
        features: features.as_ref(),
    };

    let first_signal = days.start - 1;
    let mut filter = engine.label_filter();
    let mut nowcaster: Option<Box<dyn Nowcaster>> = None;
    let mut label = 0;
    let mut refit_dates = Vec::new();
    let mut degenerate_refits = 0;
    let mut forecasts = Vec::with_capacity(days.len());
    for t in first_signal..days.end - 1 {
        if (t - first_signal) % config.refit_interval_days == 0 {
            let window = t + 1 - config.lookback_days..t + 1;
            refit_dates.push(dataset.dates()[t]);
            nowcaster = match engine.refit(&ctx, window)? {
                Refit::Model(n) => Some(n),
                Refit::Degenerate => {
                    degenerate_refits += 1;
                    None
                }
            };
        }
        let raw = match nowcaster.as_mut() {
            Some(n) => n.nowcast(&ctx, t)?,
            None => label,
        };
        label = match filter.as_mut() {
            Some(f) => f.push(raw),
            None => raw,
        };
        forecasts.push(label.min(1));
    }

    Ok(allocate(
        dataset,
        days,
        forecasts,
        config.cost_per_side,
        refit_dates,
        degenerate_refits,
    ))
}

/// Turns forecasts for the days in `days` into weights, costs and equity.
fn allocate(
    dataset: &MarketDataset,
    days: Range<usize>,
    forecasts: Vec<usize>,
    cost_per_side: f64,
    refit_dates: Vec<NaiveDate>,
    degenerate_refits: usize,
) -> BacktestResult {
    let dates = dataset.dates()[days.clone()].to_vec();
    let index_returns = dataset.index_returns().values()[days.clone()].to_vec();
    let risk_free = dataset.risk_free_daily().values()[days].to_vec();
    let initial_weight = 1.0;

    let weights: Vec<f64> = forecasts
        .iter()
        .map(|&f| if f == 1 { 0.0 } else { 1.0 })
        .collect();
    let mut prev = initial_weight;
    let mut n_reallocations = 0;
    let mut gross_returns = Vec::with_capacity(weights.len());
    let mut net_returns = Vec::with_capacity(weights.len());
    let mut equity_curve = Vec::with_capacity(weights.len());
    let mut equity = 1.0;
    for ((&w, &r), &rf) in weights.iter().zip(&index_returns).zip(&risk_free) {
        let gross = w * r + (1.0 - w) * rf;
        let turnover = (w - prev).abs();
        if turnover > 0.0 {
            n_reallocations += 1;
        }
        let net = gross - cost_per_side * turnover;
        equity *= 1.0 + net;
        gross_returns.push(gross);
        net_returns.push(net);
        equity_curve.push(equity);
        prev = w;
    }

    BacktestResult {
        regime_intervals: intervals(&dates, &forecasts),
        dates,
        forecasts,
        weights,
        initial_weight,
        index_returns,
        risk_free,
        gross_returns,
        net_returns,
        equity_curve,
        cost_per_side,
        refit_dates,
        n_reallocations,
        degenerate_refits,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCandidate {
    pub lambda: f64,
    pub report: MetricReport,
    pub n_reallocations: usize,
    pub degenerate_refits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub chosen: JumpPenalty,
    /// One row per grid value, in grid order.
    pub table: Vec<LambdaCandidate>,
    pub benchmark: MetricReport,
}

/// Picks the penalty with the highest validation Sharpe ratio; undefined
/// Sharpe ranks lowest and ties go to the larger penalty.
pub fn choose_lambda(table: &[LambdaCandidate]) -> Option<f64> {
    let score = |c: &LambdaCandidate| c.report.sharpe.unwrap_or(f64::NEG_INFINITY);
    table
        .iter()
        .max_by(|a, b| {
            score(a)
                .total_cmp(&score(b))
                .then(a.lambda.total_cmp(&b.lambda))
        })
        .map(|c| c.lambda)
}

fn check_validation_span(
    dataset: &MarketDataset,
    config: &WalkForwardConfig,
    split: &SplitSpec,
) -> Result<()> {
    split.validate()?;
    let span = split.validation();
    if (split.validation_end - split.train_end).num_days() < 730 {
        return Err(Error::invalid(
            "validation period must cover at least two years",
        ));
    }
    let days = span.resolve(dataset.dates())?;
    if days.len() <= config.refit_interval_days {
        return Err(Error::invalid(
            "validation period must contain at least two refits",
        ));
    }
    Ok(())
}

/// Runs the strategy over the validation period once per grid value.
pub fn select_lambda(
    dataset: &MarketDataset,
    config: &WalkForwardConfig,
    grid: &[f64],
    split: &SplitSpec,
) -> Result<LambdaSelection> {
    config.validate()?;
    if grid.is_empty() {
        return Err(Error::invalid("empty jump penalty grid"));
    }
    let penalties = grid
        .iter()
        .map(|&l| JumpPenalty::new(l))
        .collect::<Result<Vec<_>>>()?;
    check_validation_span(dataset, config, split)?;
    let span = split.validation();

    let results = penalties
        .par_iter()
        .map(|&p| run_walk_forward(dataset, &config.with_penalty(p), span))
        .collect::<Result<Vec<_>>>()?;
    let table = penalties
        .iter()
        .zip(&results)
        .map(|(p, res)| {
            Ok(LambdaCandidate {
                lambda: p.value(),
                report: res.report()?,
                n_reallocations: res.n_reallocations,
                degenerate_refits: res.degenerate_refits,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen = JumpPenalty::new(choose_lambda(&table).expect("non-empty grid"))?;
    Ok(LambdaSelection {
        chosen,
        table,
        benchmark: results[0].benchmark_report()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineRun {
    pub result: BacktestResult,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub strategy: EngineRun,
    pub benchmark: MetricReport,
    pub baseline: Option<EngineRun>,
}

/// Out-of-sample run over the test period with the chosen configuration,
/// optionally alongside a baseline engine (typically the HMM).
pub fn evaluate_test(
    dataset: &MarketDataset,
    config: &WalkForwardConfig,
    split: &SplitSpec,
    baseline: Option<&WalkForwardConfig>,
) -> Result<TestEvaluation> {
    split.validate()?;
    let span = split.test();
    let run = |cfg: &WalkForwardConfig| -> Result<EngineRun> {
        let result = run_walk_forward(dataset, cfg, span)?;
        let report = result.report()?;
        Ok(EngineRun { result, report })
    };
    let (strategy, baseline) = rayon::join(|| run(config), || baseline.map(run).transpose());
    let strategy = strategy?;
    let benchmark = strategy.result.benchmark_report()?;
    Ok(TestEvaluation {
        strategy,
        benchmark,
        baseline: baseline?,
    })
}
