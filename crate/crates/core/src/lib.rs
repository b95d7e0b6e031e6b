//! Regime identification with statistical jump models and a regime-aware
//! 0/1 asset allocation backtest.
//!
//! The crate is organised bottom-up:
//!
//! * [`market_data`] ingests price and yield CSVs into an aligned dataset.
//! * [`features`] builds the exponentially weighted downside-deviation and
//!   return features and standardizes them on a fitting window.
//! * [`jump_model`] fits the penalized temporal clustering model and decodes
//!   state sequences, both in-sample and online.
//! * [`hmm`] is the two-state Gaussian HMM baseline.
//! * [`backtest`] runs the walk-forward strategy, jump-penalty selection and
//!   out-of-sample evaluation.
//! * [`metrics`] computes the performance report.
//! * [`synth`] generates regime-switching synthetic markets.
//! * [`cli`] wires everything into the `jumpalloc` command.

pub mod backtest;
pub mod cli;
pub mod error;
pub mod features;
pub mod hmm;
pub mod jump_model;
pub mod market_data;
pub mod metrics;
mod rng;
pub mod synth;

pub use error::{Error, Result};

/// Trading days per year used for annualization and yield conversion.
pub const TRADING_DAYS_PER_YEAR: usize = 252;
