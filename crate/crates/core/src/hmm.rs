//! Gaussian hidden Markov model on daily log returns, estimated with
//! Baum-Welch, plus the causal median filter applied to its labels.

use std::collections::VecDeque;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jump_model::{run_lengths, StateRun};
use crate::rng::SeededRng;

/// Lower bound on every state's standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHmm {
    pub initial: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Some state's variance hit [`STD_FLOOR`] during estimation.
    pub variance_floored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    /// Argmax of the smoothed state probabilities.
    #[default]
    Smoothed,
    Viterbi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmConfig {
    pub n_states: usize,
    pub n_restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        HmmConfig {
            n_states: 2,
            n_restarts: 10,
            max_iter: 500,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl GaussianHmm {
    pub fn n_states(&self) -> usize {
        self.means.len()
    }

    /// Model with explicit parameters; the log-likelihood is left at zero.
    pub fn new(
        initial: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        means: Vec<f64>,
        stds: Vec<f64>,
    ) -> Result<Self> {
        let model = GaussianHmm {
            initial,
            transitions,
            means,
            stds,
            log_likelihood: 0.0,
            converged: false,
            iterations: 0,
            variance_floored: false,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        let stochastic = |p: &[f64]| {
            p.len() == k
                && p.iter().all(|&v| (0.0..=1.0).contains(&v))
                && (p.iter().sum::<f64>() - 1.0).abs() < 1e-10
        };
        if k == 0 || self.stds.len() != k {
            return Err(Error::invalid("HMM needs matching means and stds"));
        }
        if !stochastic(&self.initial) {
            return Err(Error::invalid(
                "initial distribution is not a probability vector",
            ));
        }
        if self.transitions.len() != k || !self.transitions.iter().all(|r| stochastic(r)) {
            return Err(Error::invalid("transition matrix is not row-stochastic"));
        }
        if self.means.iter().any(|m| !m.is_finite())
            || self.stds.iter().any(|&s| !s.is_finite() || s < STD_FLOOR)
        {
            return Err(Error::invalid(
                "state means must be finite and stds >= floor",
            ));
        }
        Ok(())
    }

    fn log_emissions(&self, x: f64, out: &mut [f64]) {
        for ((o, &m), &s) in out.iter_mut().zip(&self.means).zip(&self.stds) {
            let z = (x - m) / s;
            *o = -0.5 * z * z - s.ln() - LN_SQRT_2PI;
        }
    }

    /// Emission densities rescaled by their maximum; returns the log of the
    /// scale that was divided out.
    fn scaled_emissions(&self, x: f64, out: &mut [f64]) -> f64 {
        self.log_emissions(x, out);
        let top = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for o in out.iter_mut() {
            *o = (*o - top).exp();
        }
        top
    }

    /// Permutes states so that standard deviations increase with the label.
    fn canonicalize(mut self) -> Self {
        let k = self.n_states();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| self.stds[a].total_cmp(&self.stds[b]));
        self.initial = order.iter().map(|&i| self.initial[i]).collect();
        self.means = order.iter().map(|&i| self.means[i]).collect();
        self.stds = order.iter().map(|&i| self.stds[i]).collect();
        self.transitions = order
            .iter()
            .map(|&i| order.iter().map(|&j| self.transitions[i][j]).collect())
            .collect();
        self
    }
}

struct ForwardBackward {
    /// Smoothed state probabilities, T x K.
    gamma: Array2<f64>,
    /// Expected transition counts summed over time, K x K.
    xi_sum: Vec<Vec<f64>>,
    log_likelihood: f64,
}

fn forward_backward(model: &GaussianHmm, x: &[f64]) -> Result<ForwardBackward> {
    let (n, k) = (x.len(), model.n_states());
    let mut emis = Array2::<f64>::zeros((n, k));
    let mut alpha = Array2::<f64>::zeros((n, k));
    let mut scale = vec![0.0; n];
    let mut log_likelihood = 0.0;

    for t in 0..n {
        let mut row = emis.row_mut(t);
        let top = model.scaled_emissions(x[t], row.as_slice_mut().expect("row-major"));
        for j in 0..k {
            let prior = if t == 0 {
                model.initial[j]
            } else {
                (0..k)
                    .map(|i| alpha[[t - 1, i]] * model.transitions[i][j])
                    .sum()
            };
            alpha[[t, j]] = prior * emis[[t, j]];
        }
        let c: f64 = alpha.row(t).sum();
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::NumericalFailure("forward pass"));
        }
        alpha.row_mut(t).mapv_inplace(|v| v / c);
        scale[t] = c;
        log_likelihood += c.ln() + top;
    }

    let mut beta = Array2::<f64>::ones((n, k));
    for t in (0..n.saturating_sub(1)).rev() {
        for i in 0..k {
            beta[[t, i]] = (0..k)
                .map(|j| model.transitions[i][j] * emis[[t + 1, j]] * beta[[t + 1, j]])
                .sum::<f64>()
                / scale[t + 1];
        }
    }

    let mut gamma = &alpha * &beta;
    for mut row in gamma.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    let mut xi_sum = vec![vec![0.0; k]; k];
    for t in 0..n.saturating_sub(1) {
        for i in 0..k {
            for j in 0..k {
                xi_sum[i][j] +=
                    alpha[[t, i]] * model.transitions[i][j] * emis[[t + 1, j]] * beta[[t + 1, j]]
                        / scale[t + 1];
            }
        }
    }
    if gamma.iter().any(|v| !v.is_finite()) || !log_likelihood.is_finite() {
        return Err(Error::NumericalFailure("forward-backward"));
    }
    Ok(ForwardBackward {
        gamma,
        xi_sum,
        log_likelihood,
    })
}

/// Log-likelihood of `returns` under `model`.
pub fn log_likelihood(model: &GaussianHmm, returns: &[f64]) -> Result<f64> {
    model.validate()?;
    if returns.is_empty() {
        return Err(Error::invalid("empty return series"));
    }
    Ok(forward_backward(model, returns)?.log_likelihood)
}

/// One EM update; returns the new model and whether a variance was floored.
fn m_step(model: &GaussianHmm, x: &[f64], fb: &ForwardBackward) -> (GaussianHmm, bool) {
    let k = model.n_states();
    let mut next = model.clone();
    let mut floored = false;
    next.initial = fb.gamma.row(0).to_vec();
    for i in 0..k {
        let total: f64 = fb.xi_sum[i].iter().sum();
        if total > 0.0 {
            next.transitions[i] = fb.xi_sum[i].iter().map(|v| v / total).collect();
        }
        let weight: f64 = fb.gamma.column(i).sum();
        if weight > 0.0 {
            let mean = fb
                .gamma
                .column(i)
                .iter()
                .zip(x)
                .map(|(g, v)| g * v)
                .sum::<f64>()
                / weight;
            let var = fb
                .gamma
                .column(i)
                .iter()
                .zip(x)
                .map(|(g, v)| g * (v - mean) * (v - mean))
                .sum::<f64>()
                / weight;
            let std = var.sqrt();
            next.means[i] = mean;
            if std < STD_FLOOR {
                floored = true;
                next.stds[i] = STD_FLOOR;
            } else {
                next.stds[i] = std;
            }
        }
    }
    (next, floored)
}

/// An EM run from one starting model.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub model: GaussianHmm,
    /// Log-likelihood of the starting model and of each update.
    pub trace: Vec<f64>,
}

/// Runs Baum-Welch from `start` until the log-likelihood gain drops below
/// `tol` or `max_iter` updates have been made.
pub fn run_em(start: GaussianHmm, returns: &[f64], max_iter: usize, tol: f64) -> Result<EmRun> {
    start.validate()?;
    let mut model = start;
    let mut fb = forward_backward(&model, returns)?;
    model.log_likelihood = fb.log_likelihood;
    let mut trace = vec![fb.log_likelihood];
    let mut floored_any = false;
    model.converged = false;
    model.iterations = 0;
    for iter in 1..=max_iter {
        let (mut next, floored) = m_step(&model, returns, &fb);
        floored_any |= floored;
        let next_fb = forward_backward(&next, returns)?;
        let gain = next_fb.log_likelihood - fb.log_likelihood;
        next.log_likelihood = next_fb.log_likelihood;
        next.iterations = iter;
        trace.push(next_fb.log_likelihood);
        model = next;
        fb = next_fb;
        if gain < tol {
            model.converged = true;
            break;
        }
    }
    model.variance_floored = floored_any;
    Ok(EmRun { model, trace })
}

fn sample_moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Random starting point for restart `seed`: means perturbed around the
/// sample mean, stds scaled from the sample std, sticky transitions.
pub fn initial_guess(returns: &[f64], n_states: usize, seed: u64) -> GaussianHmm {
    let (mean, std) = sample_moments(returns);
    let std = std.max(STD_FLOOR);
    let k = n_states;
    let mut rng = SeededRng::new(seed);
    let (means, stds) = if k == 1 {
        (vec![mean], vec![std])
    } else {
        (0..k)
            .map(|_| {
                let m = mean + 0.5 * std * rng.standard_normal();
                let s = std * (0.5 + rng.uniform());
                (m, s.max(STD_FLOOR))
            })
            .unzip()
    };
    let stay = if k == 1 { 1.0 } else { 0.95 };
    let leave = if k == 1 { 0.0 } else { 0.05 / (k - 1) as f64 };
    let transitions = (0..k)
        .map(|i| (0..k).map(|j| if i == j { stay } else { leave }).collect())
        .collect();
    GaussianHmm {
        initial: vec![1.0 / k as f64; k],
        transitions,
        means,
        stds,
        log_likelihood: f64::NEG_INFINITY,
        converged: false,
        iterations: 0,
        variance_floored: false,
    }
}

/// Best of `n_restarts` Baum-Welch runs by final log-likelihood, with
/// states ordered by increasing standard deviation.
pub fn baum_welch_fit(returns: &[f64], config: &HmmConfig) -> Result<GaussianHmm> {
    let k = config.n_states;
    if k == 0 {
        return Err(Error::invalid("HMM needs at least one state"));
    }
    if config.n_restarts == 0 {
        return Err(Error::invalid("n_restarts must be at least 1"));
    }
    if returns.len() < 10 * k {
        return Err(Error::InsufficientHistory {
            needed: 10 * k,
            available: returns.len(),
        });
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("non-finite return"));
    }
    let runs = (0..config.n_restarts)
        .into_par_iter()
        .map(|r| {
            let start = initial_guess(returns, k, config.seed.wrapping_add(r as u64));
            run_em(start, returns, config.max_iter, config.tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let best = runs
        .into_iter()
        .map(|r| r.model)
        .reduce(|best, m| {
            if m.log_likelihood > best.log_likelihood {
                m
            } else {
                best
            }
        })
        .expect("at least one restart");
    Ok(best.canonicalize())
}

/// Forward-backward decoding: per-day argmax of the smoothed probabilities
/// (lowest state on ties) and the T x K probability matrix.
pub fn smoothed_states(model: &GaussianHmm, returns: &[f64]) -> Result<(Vec<usize>, Array2<f64>)> {
    model.validate()?;
    if returns.is_empty() {
        return Err(Error::invalid("empty return series"));
    }
    let fb = forward_backward(model, returns)?;
    let states = fb
        .gamma
        .rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().expect("row-major")))
        .collect();
    Ok((states, fb.gamma))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Most probable state path.
pub fn viterbi(model: &GaussianHmm, returns: &[f64]) -> Result<Vec<usize>> {
    model.validate()?;
    if returns.is_empty() {
        return Err(Error::invalid("empty return series"));
    }
    let k = model.n_states();
    let log_a: Vec<Vec<f64>> = model
        .transitions
        .iter()
        .map(|r| r.iter().map(|p| p.ln()).collect())
        .collect();
    let mut delta: Vec<f64> = vec![0.0; k];
    let mut emis = vec![0.0; k];
    let mut back = Vec::with_capacity(returns.len());
    model.log_emissions(returns[0], &mut emis);
    for j in 0..k {
        delta[j] = model.initial[j].ln() + emis[j];
    }
    for &x in &returns[1..] {
        model.log_emissions(x, &mut emis);
        let mut next = vec![0.0; k];
        let mut ptr = vec![0usize; k];
        for j in 0..k {
            let (best_i, best_v) = (0..k).map(|i| (i, delta[i] + log_a[i][j])).fold(
                (0, f64::NEG_INFINITY),
                |acc, c| if c.1 > acc.1 { c } else { acc },
            );
            next[j] = best_v + emis[j];
            ptr[j] = best_i;
        }
        delta = next;
        back.push(ptr);
    }
    if delta.iter().all(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("viterbi"));
    }
    let mut path = vec![argmax(&delta)];
    for ptr in back.iter().rev() {
        path.push(ptr[*path.last().expect("non-empty")]);
    }
    path.reverse();
    Ok(path)
}

/// Causal online decoder: after each return, reports the state a full
/// decode of everything seen so far would assign to the latest day.
#[derive(Debug, Clone)]
pub struct HmmFilter {
    model: GaussianHmm,
    decoder: Decoder,
    log_a: Vec<Vec<f64>>,
    belief: Vec<f64>,
    seen: usize,
}

impl HmmFilter {
    pub fn new(model: GaussianHmm, decoder: Decoder) -> Result<Self> {
        model.validate()?;
        let log_a = model
            .transitions
            .iter()
            .map(|r| r.iter().map(|p| p.ln()).collect())
            .collect();
        let k = model.n_states();
        Ok(HmmFilter {
            model,
            decoder,
            log_a,
            belief: vec![0.0; k],
            seen: 0,
        })
    }

    pub fn push(&mut self, x: f64) -> Result<usize> {
        let k = self.model.n_states();
        let mut emis = vec![0.0; k];
        match self.decoder {
            Decoder::Smoothed => {
                // filtered probabilities equal smoothed ones on the last day
                self.model.scaled_emissions(x, &mut emis);
                let mut next = vec![0.0; k];
                for j in 0..k {
                    let prior = if self.seen == 0 {
                        self.model.initial[j]
                    } else {
                        (0..k)
                            .map(|i| self.belief[i] * self.model.transitions[i][j])
                            .sum()
                    };
                    next[j] = prior * emis[j];
                }
                let c: f64 = next.iter().sum();
                if !c.is_finite() || c <= 0.0 {
                    return Err(Error::NumericalFailure("HMM filter"));
                }
                next.iter_mut().for_each(|v| *v /= c);
                self.belief = next;
            }
            Decoder::Viterbi => {
                self.model.log_emissions(x, &mut emis);
                let next: Vec<f64> = (0..k)
                    .map(|j| {
                        let best = if self.seen == 0 {
                            self.model.initial[j].ln()
                        } else {
                            (0..k)
                                .map(|i| self.belief[i] + self.log_a[i][j])
                                .fold(f64::NEG_INFINITY, f64::max)
                        };
                        best + emis[j]
                    })
                    .collect();
                self.belief = next;
            }
        }
        self.seen += 1;
        Ok(argmax(&self.belief))
    }
}

/// Causal majority filter over a trailing window of binary labels.
///
/// Output at `t` is the majority of the last `window` labels (fewer at the
/// start of the sequence). A tied partial window repeats the previous
/// output.
#[derive(Debug, Clone)]
pub struct MedianFilter {
    window: usize,
    history: VecDeque<bool>,
    ones: usize,
    last: usize,
}

impl MedianFilter {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "median window must be odd, got {window}"
            )));
        }
        Ok(MedianFilter {
            window,
            history: VecDeque::with_capacity(window),
            ones: 0,
            last: 0,
        })
    }

    pub fn push(&mut self, label: usize) -> usize {
        let high = label != 0;
        if self.history.len() == self.window && self.history.pop_front() == Some(true) {
            self.ones -= 1;
        }
        self.history.push_back(high);
        self.ones += high as usize;
        let n = self.history.len();
        self.last = match (2 * self.ones).cmp(&n) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => self.last,
        };
        self.last
    }
}

pub fn median_filter(labels: &[usize], window: usize) -> Result<Vec<usize>> {
    let mut filter = MedianFilter::new(window)?;
    Ok(labels.iter().map(|&l| filter.push(l)).collect())
}

/// Serialized form of a fitted HMM with its decoded states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmRecord {
    pub n_states: usize,
    pub seed: u64,
    pub log_likelihood: f64,
    pub initial: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub variance_floored: bool,
    pub states: Vec<StateRun>,
}

impl HmmRecord {
    pub fn new(model: &GaussianHmm, seed: u64, states: &[usize]) -> Self {
        HmmRecord {
            n_states: model.n_states(),
            seed,
            log_likelihood: model.log_likelihood,
            initial: model.initial.clone(),
            transitions: model.transitions.clone(),
            means: model.means.clone(),
            stds: model.stds.clone(),
            converged: model.converged,
            iterations: model.iterations,
            variance_floored: model.variance_floored,
            states: run_lengths(states),
        }
    }
}
