//! Strategy performance statistics.
//!
//! Returns and the risk-free rate are annualized geometrically over 252
//! trading days per year; volatility is the population standard deviation
//! scaled by sqrt(252). Ratios with a zero denominator are `None`.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TRADING_DAYS_PER_YEAR;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ann_return: f64,
    pub ann_vol: f64,
    pub sharpe: Option<f64>,
    pub downside_dev: f64,
    pub sortino: Option<f64>,
    pub max_drawdown: f64,
    pub calmar: Option<f64>,
    pub avg_daily_turnover: f64,
    /// Date of the equity high preceding the worst drawdown. When the high
    /// is the starting capital this is the first date of the series.
    pub mdd_peak_date: Option<NaiveDate>,
    pub mdd_trough_date: Option<NaiveDate>,
}

/// Row labels in report order.
pub const METRIC_LABELS: [&str; 8] = [
    "return", "vol", "Sharpe", "DD", "Sortino", "MDD", "Calmar", "turnover",
];

impl MetricReport {
    /// The eight statistics in [`METRIC_LABELS`] order.
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.ann_return),
            Some(self.ann_vol),
            self.sharpe,
            Some(self.downside_dev),
            self.sortino,
            Some(self.max_drawdown),
            self.calmar,
            Some(self.avg_daily_turnover),
        ]
    }
}

fn annualize_growth(log_growth: f64, n: usize) -> f64 {
    (log_growth * TRADING_DAYS_PER_YEAR as f64 / n as f64).exp_m1()
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

/// Performance statistics of daily `net_returns` against `rf_daily`.
/// Turnover is the mean absolute day-over-day weight change, zero when no
/// weights are given.
pub fn performance_report(
    dates: &[NaiveDate],
    net_returns: &[f64],
    rf_daily: &[f64],
    weights: Option<&[f64]>,
) -> Result<MetricReport> {
    let n = net_returns.len();
    if n == 0 {
        return Err(Error::invalid("empty return series"));
    }
    if dates.len() != n || rf_daily.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::invalid(
            "dates, returns, risk-free and weights must align",
        ));
    }
    if net_returns
        .iter()
        .chain(rf_daily)
        .any(|&r| !r.is_finite() || r <= -1.0)
    {
        return Err(Error::invalid("returns must be finite and greater than -1"));
    }

    let log_growth: f64 = net_returns.iter().map(|r| r.ln_1p()).sum();
    let rf_log_growth: f64 = rf_daily.iter().map(|r| r.ln_1p()).sum();
    let ann_return = annualize_growth(log_growth, n);
    let ann_rf = annualize_growth(rf_log_growth, n);

    let mean = net_returns.iter().sum::<f64>() / n as f64;
    let var = net_returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let year = TRADING_DAYS_PER_YEAR as f64;
    let ann_vol = (var * year).sqrt();
    let downside_dev =
        (year * net_returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / n as f64).sqrt();

    let mut equity = 1.0;
    let mut peak = 1.0;
    let mut peak_idx = 0;
    let mut max_drawdown = 0.0;
    let mut mdd_span = None;
    for (t, r) in net_returns.iter().enumerate() {
        equity *= 1.0 + r;
        if equity > peak {
            peak = equity;
            peak_idx = t;
        }
        let dd = equity / peak - 1.0;
        if dd < max_drawdown {
            max_drawdown = dd;
            mdd_span = Some((peak_idx, t));
        }
    }

    let avg_daily_turnover = weights.map_or(0.0, |w| {
        w.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / n as f64
    });

    Ok(MetricReport {
        ann_return,
        ann_vol,
        sharpe: ratio(ann_return - ann_rf, ann_vol),
        downside_dev,
        sortino: ratio(ann_return - ann_rf, downside_dev),
        max_drawdown,
        calmar: ratio(ann_return, max_drawdown.abs()),
        avg_daily_turnover,
        mdd_peak_date: mdd_span.map(|(p, _)| dates[p]),
        mdd_trough_date: mdd_span.map(|(_, t)| dates[t]),
    })
}

/// Aligned plain-text table, one column per report, rows in
/// [`METRIC_LABELS`] order. Undefined ratios print as `n/a`.
pub fn format_table(columns: &[(&str, &MetricReport)]) -> String {
    let width = columns
        .iter()
        .map(|(h, _)| h.len())
        .max()
        .unwrap_or(0)
        .max(9);
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "");
    for (header, _) in columns {
        let _ = write!(out, " {header:>width$}");
    }
    out.push('\n');
    for (i, label) in METRIC_LABELS.iter().enumerate() {
        let _ = write!(out, "{label:<10}");
        for (_, report) in columns {
            let cell = report.values()[i].map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            let _ = write!(out, " {cell:>width$}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
        (0..n)
            .map(|i| start + chrono::Days::new(i as u64))
            .collect()
    }

    #[test]
    fn drawdown_hand_example() {
        // equity 1 -> 1.2 -> 0.6 -> 0.9
        let r = [0.2, -0.5, 0.5];
        let d = dates(3);
        let m = performance_report(&d, &r, &[0.0; 3], None).unwrap();
        assert!((m.max_drawdown + 0.5).abs() < 1e-15);
        assert_eq!(m.mdd_peak_date, Some(d[0]));
        assert_eq!(m.mdd_trough_date, Some(d[1]));
        assert!((m.calmar.unwrap() - m.ann_return / 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_weights_have_zero_turnover() {
        let m = performance_report(
            &dates(4),
            &[0.01, -0.01, 0.0, 0.02],
            &[0.0; 4],
            Some(&[1.0; 4]),
        )
        .unwrap();
        assert_eq!(m.avg_daily_turnover, 0.0);
    }

    #[test]
    fn flips_over_length() {
        let w = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let m = performance_report(&dates(8), &[0.0; 8], &[0.0; 8], Some(&w)).unwrap();
        assert!((m.avg_daily_turnover - 4.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn flat_series_has_undefined_ratios() {
        let m = performance_report(&dates(5), &[0.0; 5], &[0.0; 5], None).unwrap();
        assert_eq!(m.ann_return, 0.0);
        assert_eq!(m.max_drawdown, 0.0);
        assert_eq!(m.sharpe, None);
        assert_eq!(m.sortino, None);
        assert_eq!(m.calmar, None);
        assert_eq!(m.mdd_peak_date, None);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"sharpe\":null"));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(performance_report(&[], &[], &[], None).is_err());
        assert!(performance_report(&dates(2), &[0.0, -1.0], &[0.0; 2], None).is_err());
        assert!(performance_report(&dates(2), &[0.0; 2], &[0.0], None).is_err());
    }

    #[test]
    fn monotone_equity_has_no_drawdown() {
        let m = performance_report(&dates(4), &[0.01, 0.0, 0.02, 0.001], &[0.0; 4], None).unwrap();
        assert_eq!(m.max_drawdown, 0.0);
    }

    #[test]
    fn table_layout() {
        let m = performance_report(&dates(3), &[0.01, -0.02, 0.03], &[0.0; 3], None).unwrap();
        let flat = performance_report(&dates(3), &[0.0; 3], &[0.0; 3], None).unwrap();
        let text = format_table(&[("JM", &m), ("flat", &flat)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 9);
        assert!(lines[1].starts_with("return"));
        assert!(lines[8].starts_with("turnover"));
        assert!(lines[3].ends_with("n/a"));
        let widths: Vec<usize> = lines.iter().map(|l| l.len()).collect();
        assert!(widths.iter().all(|&w| w == widths[0]));
    }
}
