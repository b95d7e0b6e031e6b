//! Exponentially weighted downside-deviation and return features.
//!
//! Weights are finite-history and normalized: the value at `t` averages
//! `x[0..=t]` with weight `2^(-lag / half_life)` on each lag, so early values
//! are well defined but rest on few observations. The first [`WARMUP`] rows
//! of a feature matrix are therefore not used for fitting.

use std::ops::Range;

use chrono::NaiveDate;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::AlignedSeries;

/// Rows at the start of a feature matrix excluded from fitting windows.
pub const WARMUP: usize = 120;

pub const FEATURE_NAMES: [&str; 4] = [
    "dd_20",
    "dd_20_minus_dd_60",
    "dd_60_minus_dd_120",
    "ewma_ret_120",
];

pub fn ewm_mean(x: &[f64], half_life: f64) -> Result<Vec<f64>> {
    if !half_life.is_finite() || half_life <= 0.0 {
        return Err(Error::invalid(format!(
            "half-life must be positive, got {half_life}"
        )));
    }
    if x.is_empty() {
        return Err(Error::invalid("ewm_mean of an empty series"));
    }
    let decay = 0.5f64.powf(1.0 / half_life);
    let mut num = 0.0;
    let mut den = 0.0;
    Ok(x.iter()
        .map(|&v| {
            num = v + decay * num;
            den = 1.0 + decay * den;
            num / den
        })
        .collect())
}

/// Square root of the EWM mean of squared negative returns. Positive
/// returns enter as zeros.
pub fn ewm_downside_deviation(returns: &[f64], half_life: f64) -> Result<Vec<f64>> {
    let squared_losses: Vec<f64> = returns.iter().map(|&r| r.min(0.0).powi(2)).collect();
    Ok(ewm_mean(&squared_losses, half_life)?
        .into_iter()
        .map(f64::sqrt)
        .collect())
}

/// T observations of D features, one row per trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dates: Vec<NaiveDate>,
    values: Array2<f64>,
    names: Vec<String>,
    warmup: usize,
}

impl FeatureMatrix {
    pub fn new(dates: Vec<NaiveDate>, values: Array2<f64>, names: Vec<String>) -> Result<Self> {
        if dates.len() != values.nrows() {
            return Err(Error::invalid("feature rows and dates differ in length"));
        }
        if names.len() != values.ncols() {
            return Err(Error::invalid("feature names and columns differ in count"));
        }
        Ok(FeatureMatrix {
            dates,
            values,
            names,
            warmup: 0,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Index of the first row usable in a fitting window.
    pub fn warmup(&self) -> usize {
        self.warmup
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn rows(&self, range: Range<usize>) -> ArrayView2<'_, f64> {
        self.values.slice(s![range, ..])
    }
}

/// The four-column feature set: DD(20), DD(20)-DD(60), DD(60)-DD(120) and
/// the 120-day EWM mean return, all from daily log returns.
pub fn build_feature_set(log_returns: &AlignedSeries) -> Result<FeatureMatrix> {
    let r = log_returns.values();
    if r.len() < WARMUP {
        return Err(Error::InsufficientHistory {
            needed: WARMUP,
            available: r.len(),
        });
    }
    let dd20 = ewm_downside_deviation(r, 20.0)?;
    let dd60 = ewm_downside_deviation(r, 60.0)?;
    let dd120 = ewm_downside_deviation(r, 120.0)?;
    let ret120 = ewm_mean(r, 120.0)?;

    let mut values = Array2::zeros((r.len(), 4));
    for (t, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
        row[0] = dd20[t];
        row[1] = dd20[t] - dd60[t];
        row[2] = dd60[t] - dd120[t];
        row[3] = ret120[t];
    }
    Ok(FeatureMatrix {
        dates: log_returns.dates().to_vec(),
        values,
        names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        warmup: WARMUP,
    })
}

/// Per-feature location and scale estimated on one fitting window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl StandardizationParams {
    pub fn identity(n_features: usize) -> Self {
        StandardizationParams {
            means: vec![0.0; n_features],
            stds: vec![1.0; n_features],
        }
    }

    /// Standardizes a single observation.
    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(y, (m, s))| (y - m) / s)
            .collect()
    }
}

/// Mean and population standard deviation of each feature over `window`.
pub fn fit_standardizer(
    features: &FeatureMatrix,
    window: Range<usize>,
) -> Result<StandardizationParams> {
    if window.end > features.n_rows() || window.start >= window.end {
        return Err(Error::invalid(format!(
            "window {window:?} outside {} rows",
            features.n_rows()
        )));
    }
    if window.len() < 2 {
        return Err(Error::invalid(
            "standardization window needs at least 2 rows",
        ));
    }
    if window.start < features.warmup {
        return Err(Error::InsufficientHistory {
            needed: features.warmup + window.len(),
            available: window.end,
        });
    }
    let block = features.rows(window);
    let n = block.nrows() as f64;
    let mut means = Vec::with_capacity(block.ncols());
    let mut stds = Vec::with_capacity(block.ncols());
    for (d, col) in block.axis_iter(Axis(1)).enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std.is_nan() || std <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::ZeroVariance { feature: d });
        }
        means.push(mean);
        stds.push(std);
    }
    Ok(StandardizationParams { means, stds })
}

/// Standardizes rows in `range` with frozen parameters.
pub fn apply_standardizer(
    features: &FeatureMatrix,
    params: &StandardizationParams,
    range: Range<usize>,
) -> Result<FeatureMatrix> {
    if params.means.len() != features.n_features() || params.stds.len() != features.n_features() {
        return Err(Error::invalid("standardizer dimension mismatch"));
    }
    if params.stds.iter().any(|s| s.is_nan() || *s <= 0.0) {
        return Err(Error::invalid("standardizer stds must be positive"));
    }
    if range.end > features.n_rows() || range.start > range.end {
        return Err(Error::invalid(format!(
            "range {range:?} outside {} rows",
            features.n_rows()
        )));
    }
    let means = Array1::from(params.means.clone());
    let stds = Array1::from(params.stds.clone());
    let values = (&features.rows(range.clone()) - &means) / &stds;
    Ok(FeatureMatrix {
        dates: features.dates[range].to_vec(),
        values,
        names: features.names.clone(),
        warmup: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        (0..n)
            .map(|i| start + chrono::Days::new(i as u64))
            .collect()
    }

    fn log_series(values: Vec<f64>) -> AlignedSeries {
        AlignedSeries::new(dates(values.len()), values).unwrap()
    }

    #[test]
    fn ewm_hand_values() {
        assert_eq!(ewm_mean(&[5.0], 3.0).unwrap(), vec![5.0]);
        let out = ewm_mean(&[0.0, 1.0], 1.0).unwrap();
        assert!((out[1] - 2.0 / 3.0).abs() < 1e-15);
        let flat = ewm_mean(&[2.5; 50], 7.0).unwrap();
        assert!(flat.iter().all(|v| (v - 2.5).abs() < 1e-14));
    }

    #[test]
    fn ewm_rejects_bad_half_life() {
        assert!(ewm_mean(&[1.0], 0.0).is_err());
        assert!(ewm_mean(&[1.0], -2.0).is_err());
        assert!(ewm_mean(&[1.0], f64::NAN).is_err());
        assert!(ewm_downside_deviation(&[1.0], 0.0).is_err());
    }

    #[test]
    fn downside_deviation_hand_values() {
        assert_eq!(
            ewm_downside_deviation(&[0.1, 0.0, 0.3], 5.0).unwrap(),
            vec![0.0; 3]
        );
        let one = ewm_downside_deviation(&[-0.1], 5.0).unwrap();
        assert!((one[0] - 0.1).abs() < 1e-15);
        // sqrt((1*0 + 0.5*0.01) / 1.5)
        let two = ewm_downside_deviation(&[-0.1, 0.1], 1.0).unwrap();
        assert!((two[1] - 0.057_735_026_918_962_58).abs() < 1e-12);
    }

    #[test]
    fn feature_set_on_degenerate_inputs() {
        let zeros = build_feature_set(&log_series(vec![0.0; 200])).unwrap();
        assert!(zeros.values().iter().all(|&v| v == 0.0));
        assert_eq!(zeros.warmup(), WARMUP);

        let ups = build_feature_set(&log_series(vec![0.01; 200])).unwrap();
        for row in ups.values().rows() {
            assert_eq!(&row.to_vec()[..3], &[0.0, 0.0, 0.0]);
        }
        for t in WARMUP..200 {
            assert!((ups.values()[[t, 3]] - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn feature_set_requires_warmup() {
        let err = build_feature_set(&log_series(vec![0.0; WARMUP - 1])).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { .. }));
    }

    #[test]
    fn two_point_standardizer() {
        let m = FeatureMatrix::new(
            dates(2),
            array![[0.0, 1.0], [2.0, 5.0]],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let p = fit_standardizer(&m, 0..2).unwrap();
        assert_eq!(p.means, vec![1.0, 3.0]);
        assert_eq!(p.stds, vec![1.0, 2.0]);
        let z = apply_standardizer(&m, &p, 0..2).unwrap();
        assert_eq!(z.values(), array![[-1.0, -1.0], [1.0, 1.0]]);
    }

    #[test]
    fn standardizer_errors() {
        let m = FeatureMatrix::new(
            dates(3),
            array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        assert!(matches!(
            fit_standardizer(&m, 0..3),
            Err(Error::ZeroVariance { feature: 0 })
        ));
        assert!(fit_standardizer(&m, 0..1).is_err());
        assert!(fit_standardizer(&m, 1..5).is_err());

        let built = build_feature_set(&log_series([-0.01, 0.02].repeat(100))).unwrap();
        assert!(matches!(
            fit_standardizer(&built, 10..150),
            Err(Error::InsufficientHistory { .. })
        ));
        assert!(fit_standardizer(&built, WARMUP..200).is_ok());
    }

    #[test]
    fn identity_params_leave_matrix_unchanged() {
        let m = FeatureMatrix::new(
            dates(3),
            array![[0.5, -1.0], [2.0, 3.0], [7.0, 0.25]],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let z = apply_standardizer(&m, &StandardizationParams::identity(2), 0..3).unwrap();
        assert_eq!(z.values(), m.values());
    }

    #[test]
    fn out_of_window_rows_use_frozen_params() {
        let m = FeatureMatrix::new(
            dates(4),
            array![[0.0], [2.0], [10.0], [-4.0]],
            vec!["a".into()],
        )
        .unwrap();
        let p = fit_standardizer(&m, 0..2).unwrap();
        let z = apply_standardizer(&m, &p, 2..4).unwrap();
        assert_eq!(z.values(), array![[9.0], [-5.0]]);
        assert_eq!(z.dates(), &m.dates()[2..4]);
    }
}
