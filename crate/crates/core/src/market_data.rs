//! Daily price and yield ingestion.
//!
//! Prices are total-return index levels; yields are decimal annualized
//! rates (0.05 = 5%). [`build_dataset`] puts both on the price calendar and
//! derives simple returns, log returns and the daily risk-free return.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TRADING_DAYS_PER_YEAR;

/// Date-indexed observations on a strictly increasing calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl AlignedSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} dates but {} values",
                dates.len(),
                values.len()
            )));
        }
        for pair in dates.windows(2) {
            if pair[1] == pair[0] {
                return Err(Error::DuplicateDate(pair[1]));
            }
            if pair[1] < pair[0] {
                return Err(Error::invalid(format!(
                    "dates not increasing: {} after {}",
                    pair[1], pair[0]
                )));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { line: i as u64 + 1 });
        }
        Ok(AlignedSeries { dates, values })
    }

    /// Sorts `(date, value)` pairs by date and rejects duplicates.
    pub fn from_unsorted(mut pairs: Vec<(NaiveDate, f64)>) -> Result<Self> {
        pairs.sort_by_key(|&(d, _)| d);
        let (dates, values) = pairs.into_iter().unzip();
        Self::new(dates, values)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.dates.iter().copied().zip(self.values.iter().copied())
    }
}

/// Column layout of a price or yield CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub date_column: String,
    pub value_column: String,
    pub date_format: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            date_column: "date".to_string(),
            value_column: "value".to_string(),
            date_format: "%Y-%m-%d".to_string(),
        }
    }
}

impl CsvSchema {
    pub fn new(date_column: &str, value_column: &str) -> Self {
        CsvSchema {
            date_column: date_column.to_string(),
            value_column: value_column.to_string(),
            ..Default::default()
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<AlignedSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, schema)
}

/// Parses a headed CSV. Lines starting with `#` are comments. Row numbers in
/// errors are physical line numbers, counting the header as line 1.
pub fn parse_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<AlignedSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("missing column '{name}'")))
    };
    let date_idx = column(&schema.date_column)?;
    let value_idx = column(&schema.value_column)?;

    let mut pairs = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(e, 0)),
        }
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize, what: &str| {
            record
                .get(idx)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::MalformedRow {
                    line,
                    message: format!("missing {what}"),
                })
        };
        let raw_date = field(date_idx, "date")?;
        let date = NaiveDate::parse_from_str(raw_date, &schema.date_format).map_err(|e| {
            Error::MalformedRow {
                line,
                message: format!("bad date '{raw_date}': {e}"),
            }
        })?;
        let raw_value = field(value_idx, "value")?;
        let value: f64 = raw_value.parse().map_err(|_| Error::MalformedRow {
            line,
            message: format!("bad number '{raw_value}'"),
        })?;
        if !value.is_finite() {
            return Err(Error::NonFiniteValue { line });
        }
        pairs.push((date, value));
    }
    AlignedSeries::from_unsorted(pairs)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::MalformedRow {
        line,
        message: e.to_string(),
    }
}

/// Index levels with their derived return series, all on one calendar.
///
/// The price on the day before the first return date is kept as
/// `base_price` so that every return has both of its endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketDataset {
    base_date: NaiveDate,
    base_price: f64,
    index_prices: AlignedSeries,
    index_returns: AlignedSeries,
    log_returns: AlignedSeries,
    risk_free_daily: AlignedSeries,
}

/// Geometric de-annualization of a decimal annual yield.
pub fn daily_risk_free(annual_yield: f64) -> f64 {
    (1.0 + annual_yield).powf(1.0 / TRADING_DAYS_PER_YEAR as f64) - 1.0
}

/// Aligns yields onto the price calendar and derives daily returns.
///
/// Yields are forward-filled: each price date takes the most recent yield
/// dated on or before it. Price dates before the first yield are dropped.
pub fn build_dataset(prices: &AlignedSeries, yields: &AlignedSeries) -> Result<MarketDataset> {
    if let Some((date, value)) = prices.iter().find(|&(_, p)| p.is_nan() || p <= 0.0) {
        return Err(Error::NonPositivePrice { date, value });
    }
    let first_yield = *yields.dates().first().ok_or(Error::EmptyIntersection)?;
    let start = prices.dates().partition_point(|&d| d < first_yield);
    if prices.len().saturating_sub(start) < 2 {
        return Err(Error::EmptyIntersection);
    }

    let n = prices.len() - start - 1;
    let mut dates = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    let mut simple = Vec::with_capacity(n);
    let mut logs = Vec::with_capacity(n);
    let mut rf = Vec::with_capacity(n);

    let yd = yields.dates();
    let yv = yields.values();
    let mut cursor = 0;
    let pd = prices.dates();
    let pv = prices.values();
    for t in start + 1..prices.len() {
        while cursor + 1 < yd.len() && yd[cursor + 1] <= pd[t] {
            cursor += 1;
        }
        let r = pv[t] / pv[t - 1] - 1.0;
        dates.push(pd[t]);
        levels.push(pv[t]);
        simple.push(r);
        logs.push(r.ln_1p());
        rf.push(daily_risk_free(yv[cursor]));
    }

    Ok(MarketDataset {
        base_date: pd[start],
        base_price: pv[start],
        index_prices: AlignedSeries::new(dates.clone(), levels)?,
        index_returns: AlignedSeries::new(dates.clone(), simple)?,
        log_returns: AlignedSeries::new(dates.clone(), logs)?,
        risk_free_daily: AlignedSeries::new(dates, rf)?,
    })
}

impl MarketDataset {
    /// Builds a dataset directly from daily simple returns, starting from an
    /// index level of 1.0 on `base_date`.
    pub fn from_returns(
        base_date: NaiveDate,
        dates: Vec<NaiveDate>,
        returns: Vec<f64>,
        risk_free_daily: Vec<f64>,
    ) -> Result<Self> {
        if returns.len() != risk_free_daily.len() {
            return Err(Error::invalid("returns and risk-free lengths differ"));
        }
        if dates.first().is_some_and(|&d| d <= base_date) {
            return Err(Error::invalid("base date must precede the first return"));
        }
        if let Some(i) = returns.iter().position(|&r| !r.is_finite() || r <= -1.0) {
            return Err(Error::invalid(format!("return at index {i} is not > -1")));
        }
        let mut level = 1.0;
        let levels: Vec<f64> = returns
            .iter()
            .map(|r| {
                level *= 1.0 + r;
                level
            })
            .collect();
        let logs = returns.iter().map(|r| r.ln_1p()).collect();
        Ok(MarketDataset {
            base_date,
            base_price: 1.0,
            index_prices: AlignedSeries::new(dates.clone(), levels)?,
            index_returns: AlignedSeries::new(dates.clone(), returns)?,
            log_returns: AlignedSeries::new(dates.clone(), logs)?,
            risk_free_daily: AlignedSeries::new(dates, risk_free_daily)?,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        self.index_returns.dates()
    }

    pub fn len(&self) -> usize {
        self.index_returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_returns.is_empty()
    }

    pub fn base_date(&self) -> NaiveDate {
        self.base_date
    }

    pub fn base_price(&self) -> f64 {
        self.base_price
    }

    pub fn index_prices(&self) -> &AlignedSeries {
        &self.index_prices
    }

    pub fn index_returns(&self) -> &AlignedSeries {
        &self.index_returns
    }

    pub fn log_returns(&self) -> &AlignedSeries {
        &self.log_returns
    }

    pub fn risk_free_daily(&self) -> &AlignedSeries {
        &self.risk_free_daily
    }

    /// The first `n` return days, keeping the same base price.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::invalid(format!(
                "cannot truncate {} days to {n}",
                self.len()
            )));
        }
        let cut = |s: &AlignedSeries| AlignedSeries {
            dates: s.dates[..n].to_vec(),
            values: s.values[..n].to_vec(),
        };
        Ok(MarketDataset {
            base_date: self.base_date,
            base_price: self.base_price,
            index_prices: cut(&self.index_prices),
            index_returns: cut(&self.index_returns),
            log_returns: cut(&self.log_returns),
            risk_free_daily: cut(&self.risk_free_daily),
        })
    }
}
