//! Regime-switching synthetic markets with known state paths.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{build_dataset, AlignedSeries, MarketDataset};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_days: usize,
    /// Daily log-return mean per state.
    pub state_means: Vec<f64>,
    /// Daily log-return standard deviation per state.
    pub state_stds: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
    #[serde(default)]
    pub initial_state: usize,
    #[serde(default)]
    pub annual_yield: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date")
}

impl SynthSpec {
    /// Two-state spec with symmetric persistence `stay`.
    pub fn two_state(n_days: usize, means: [f64; 2], stds: [f64; 2], stay: f64, seed: u64) -> Self {
        SynthSpec {
            n_days,
            state_means: means.to_vec(),
            state_stds: stds.to_vec(),
            transitions: vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]],
            initial_state: 0,
            annual_yield: 0.0,
            seed,
            start_date: default_start(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.state_means.len();
        if k == 0 || self.state_stds.len() != k || self.transitions.len() != k {
            return Err(Error::invalid(
                "state means, stds and transitions must have matching K >= 1",
            ));
        }
        if self.n_days == 0 || self.n_days > 1_000_000 {
            return Err(Error::invalid("n_days must be in 1..=1000000"));
        }
        if self.initial_state >= k {
            return Err(Error::invalid("initial_state out of range"));
        }
        if self
            .state_means
            .iter()
            .any(|m| !m.is_finite() || m.abs() > 1.0)
        {
            return Err(Error::invalid(
                "state means must be finite daily log returns",
            ));
        }
        if self
            .state_stds
            .iter()
            .any(|&s| s.is_nan() || s <= 0.0 || s > 1.0)
        {
            return Err(Error::invalid("state stds must be in (0, 1]"));
        }
        for row in &self.transitions {
            if row.len() != k
                || row.iter().any(|&p| !(0.0..=1.0).contains(&p))
                || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12
            {
                return Err(Error::invalid(
                    "transition rows must be probability vectors",
                ));
            }
        }
        if !self.annual_yield.is_finite() || self.annual_yield <= -1.0 {
            return Err(Error::invalid("annual_yield must be finite and > -1"));
        }
        Ok(())
    }
}

/// Successive weekdays starting at `start` (moved forward to a weekday).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Simulated prices, flat yields and the true state of each return day.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub prices: AlignedSeries,
    pub yields: AlignedSeries,
    pub states: Vec<usize>,
}

/// Draws the state path and log returns. The stream consumes one uniform
/// per state transition (none on the first day) and two per return.
pub fn simulate_market(spec: &SynthSpec) -> Result<SyntheticMarket> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let dates = business_days(spec.start_date, spec.n_days + 1);
    let mut states = Vec::with_capacity(spec.n_days);
    let mut prices = Vec::with_capacity(spec.n_days + 1);
    let mut log_level = 100f64.ln();
    prices.push(100.0);
    let mut state = spec.initial_state;
    for t in 0..spec.n_days {
        if t > 0 {
            let row = &spec.transitions[state];
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut next = row.len() - 1;
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            state = next;
        }
        states.push(state);
        log_level += spec.state_means[state] + spec.state_stds[state] * rng.standard_normal();
        prices.push(log_level.exp());
    }
    let yields = AlignedSeries::new(dates.clone(), vec![spec.annual_yield; dates.len()])?;
    Ok(SyntheticMarket {
        prices: AlignedSeries::new(dates, prices)?,
        yields,
        states,
    })
}

/// Simulated dataset and the true state of each return day.
pub fn simulate(spec: &SynthSpec) -> Result<(MarketDataset, Vec<usize>)> {
    let market = simulate_market(spec)?;
    let dataset = build_dataset(&market.prices, &market.yields)?;
    Ok((dataset, market.states))
}

/// Mean per-class recall of binary labels, maximized over the two ways of
/// matching predicted labels to true ones. `None` when the truth has only
/// one class.
pub fn balanced_accuracy(predicted: &[usize], truth: &[usize]) -> Result<Option<f64>> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid("prediction and truth lengths differ"));
    }
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (&p, &t) in predicted.iter().zip(truth) {
        let t = (t != 0) as usize;
        totals[t] += 1;
        if (p != 0) as usize == t {
            hits[t] += 1;
        }
    }
    if totals.contains(&0) {
        return Ok(None);
    }
    let direct = 0.5 * (hits[0] as f64 / totals[0] as f64 + hits[1] as f64 / totals[1] as f64);
    Ok(Some(direct.max(1.0 - direct)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_transitions_keep_state() {
        let mut spec = SynthSpec::two_state(300, [0.0, 0.0], [0.01, 0.02], 1.0, 5);
        spec.transitions = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (ds, states) = simulate(&spec).unwrap();
        assert!(states.iter().all(|&s| s == 0));
        assert_eq!(ds.len(), 300);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec::two_state(500, [0.0005, -0.0008], [0.007, 0.02], 0.99, 42);
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a, b);
        let other = simulate(&SynthSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn per_state_std_matches_spec() {
        let spec = SynthSpec::two_state(4000, [0.0005, -0.0008], [0.007, 0.02], 0.99, 1);
        let (ds, states) = simulate(&spec).unwrap();
        for (k, target) in [0.007, 0.02].into_iter().enumerate() {
            let xs: Vec<f64> = ds
                .log_returns()
                .values()
                .iter()
                .zip(&states)
                .filter(|(_, &s)| s == k)
                .map(|(&r, _)| r)
                .collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let std = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!((std / target - 1.0).abs() < 0.10, "state {k}: {std}");
        }
    }

    #[test]
    fn calendar_skips_weekends() {
        let days = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(days[1], NaiveDate::from_ymd_opt(2024, 1, 8).unwrap());
    }

    #[test]
    fn spec_validation() {
        let good = SynthSpec::two_state(10, [0.0, 0.0], [0.01, 0.02], 0.9, 0);
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.state_stds[0] = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.transitions[1] = vec![0.5, 0.6];
        assert!(bad.validate().is_err());
        let mut bad = good;
        bad.initial_state = 2;
        assert!(bad.validate().is_err());
        assert!(SynthSpec::from_json(r#"{"n_days": 5}"#).is_err());
    }

    #[test]
    fn balanced_accuracy_cases() {
        let truth = [0, 0, 1, 1, 0, 1];
        assert_eq!(balanced_accuracy(&truth, &truth).unwrap(), Some(1.0));
        let flipped: Vec<usize> = truth.iter().map(|&t| 1 - t).collect();
        assert_eq!(balanced_accuracy(&flipped, &truth).unwrap(), Some(1.0));
        assert_eq!(balanced_accuracy(&[0; 6], &truth).unwrap(), Some(0.5));
        assert_eq!(balanced_accuracy(&[0, 1], &[1, 1]).unwrap(), None);
        assert!(balanced_accuracy(&[0], &[0, 1]).is_err());
    }
}
