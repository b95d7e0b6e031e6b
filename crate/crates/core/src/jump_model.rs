//! Statistical jump model: K-state temporal clustering with a fixed cost
//! per state change.
//!
//! The fitted model minimizes
//!
//! ```text
//! sum_t 0.5 * |y_t - theta_{s_t}|^2  +  lambda * #{t : s_{t-1} != s_t}
//! ```
//!
//! by coordinate descent: centroids are cluster means given the states, and
//! states are the exact minimizer given the centroids, found by dynamic
//! programming. Each restart is seeded by k-means++.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Cost charged for each state change. Always finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct JumpPenalty(f64);

impl JumpPenalty {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda >= 0.0 && lambda.is_finite() {
            Ok(JumpPenalty(lambda))
        } else {
            Err(Error::invalid(format!(
                "jump penalty must be finite and >= 0, got {lambda}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for JumpPenalty {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        JumpPenalty::new(v)
    }
}

impl From<JumpPenalty> for f64 {
    fn from(p: JumpPenalty) -> f64 {
        p.0
    }
}

#[inline]
pub(crate) fn half_sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

fn check_shapes(features: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Result<()> {
    if features.nrows() == 0 {
        return Err(Error::invalid("no observations"));
    }
    if centroids.nrows() == 0 {
        return Err(Error::invalid("no centroids"));
    }
    if features.ncols() != centroids.ncols() {
        return Err(Error::invalid(format!(
            "features have {} columns, centroids {}",
            features.ncols(),
            centroids.ncols()
        )));
    }
    Ok(())
}

fn distinct_rows(features: ArrayView2<f64>) -> usize {
    let key = |row: ArrayView1<f64>| -> Vec<u64> {
        // +0.0 and -0.0 are the same point
        row.iter().map(|v| (v + 0.0).to_bits()).collect()
    };
    features
        .rows()
        .into_iter()
        .map(key)
        .collect::<HashSet<_>>()
        .len()
}

/// k-means++ seeding: the first centroid is a uniformly drawn row, each
/// further one a row drawn with probability proportional to its squared
/// distance from the nearest centroid chosen so far.
pub fn kmeanspp_init(features: ArrayView2<f64>, n_states: usize, seed: u64) -> Result<Array2<f64>> {
    let n = features.nrows();
    if n_states == 0 || n < n_states {
        return Err(Error::invalid(format!(
            "need 1 <= K <= T, got K={n_states}, T={n}"
        )));
    }
    let distinct = distinct_rows(features);
    if n_states > distinct {
        return Err(Error::TooFewDistinctRows {
            requested: n_states,
            distinct,
        });
    }

    let mut rng = SeededRng::new(seed);
    let mut chosen = Vec::with_capacity(n_states);
    chosen.push(rng.index(n));
    let mut nearest: Vec<f64> = features
        .rows()
        .into_iter()
        .map(|row| half_sq_dist(row, features.row(chosen[0])))
        .collect();
    while chosen.len() < n_states {
        let next = rng
            .weighted_index(&nearest)
            .expect("a row distinct from all chosen centroids exists");
        chosen.push(next);
        let c = features.row(next);
        for (d, row) in nearest.iter_mut().zip(features.rows()) {
            *d = d.min(half_sq_dist(row, c));
        }
    }
    Ok(features.select(Axis(0), &chosen))
}

/// A state sequence together with its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedStates {
    pub states: Vec<usize>,
    pub objective: f64,
}

/// Objective of a given state sequence under fixed centroids.
pub fn objective(
    features: ArrayView2<f64>,
    centroids: ArrayView2<f64>,
    states: &[usize],
    penalty: JumpPenalty,
) -> f64 {
    let loss: f64 = features
        .rows()
        .into_iter()
        .zip(states)
        .map(|(row, &s)| half_sq_dist(row, centroids.row(s)))
        .sum();
    loss + penalty.0 * count_jumps(states) as f64
}

pub fn count_jumps(states: &[usize]) -> usize {
    states.windows(2).filter(|w| w[0] != w[1]).count()
}

/// One step of the value recursion
/// `V_t(k) = loss_t(k) + min(V_{t-1}(k), min_j V_{t-1}(j) + lambda)`.
#[inline]
fn forward_step(prev: Option<&[f64]>, losses: &[f64], penalty: f64, out: &mut [f64]) {
    match prev {
        None => out.copy_from_slice(losses),
        Some(prev) => {
            let best = prev.iter().copied().fold(f64::INFINITY, f64::min);
            let switch = best + penalty;
            for ((o, &l), &p) in out.iter_mut().zip(losses).zip(prev) {
                *o = l + p.min(switch);
            }
        }
    }
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = k;
        }
    }
    best
}

fn state_losses(row: ArrayView1<f64>, centroids: ArrayView2<f64>, out: &mut [f64]) {
    for (o, c) in out.iter_mut().zip(centroids.rows()) {
        *o = half_sq_dist(row, c);
    }
}

/// Exact minimizer of the objective over all state sequences for fixed
/// centroids.
///
/// Ties resolve to the lowest state index at the final day and, walking
/// backwards, to staying in the state chosen for the following day.
pub fn optimal_states_dp(
    features: ArrayView2<f64>,
    centroids: ArrayView2<f64>,
    penalty: JumpPenalty,
) -> Result<DecodedStates> {
    check_shapes(features, centroids)?;
    let (n, k) = (features.nrows(), centroids.nrows());
    let lambda = penalty.0;

    let mut values = vec![0.0; n * k];
    let mut losses = vec![0.0; k];
    for (t, row) in features.rows().into_iter().enumerate() {
        state_losses(row, centroids, &mut losses);
        let (done, rest) = values.split_at_mut(t * k);
        let prev = (t > 0).then(|| &done[(t - 1) * k..]);
        forward_step(prev, &losses, lambda, &mut rest[..k]);
    }

    let mut states = vec![0; n];
    states[n - 1] = argmin(&values[(n - 1) * k..]);
    for t in (0..n - 1).rev() {
        let next = states[t + 1];
        let v = &values[t * k..(t + 1) * k];
        let cost = |j: usize| v[j] + if j == next { 0.0 } else { lambda };
        let mut best = next;
        let mut best_cost = cost(next);
        for j in 0..k {
            let c = cost(j);
            if c < best_cost {
                best = j;
                best_cost = c;
            }
        }
        states[t] = best;
    }
    let objective = objective(features, centroids, &states, penalty);
    Ok(DecodedStates { states, objective })
}

/// Most likely current state given observations from the start of the
/// fitting window up to today, with centroids held fixed.
pub fn online_infer(
    features_upto_t: ArrayView2<f64>,
    centroids: ArrayView2<f64>,
    penalty: JumpPenalty,
) -> Result<usize> {
    check_shapes(features_upto_t, centroids)?;
    let mut decoder = OnlineDecoder::new(centroids.to_owned(), penalty);
    let mut state = 0;
    for row in features_upto_t.rows() {
        state = decoder.push(row);
    }
    Ok(state)
}

/// Incremental form of [`online_infer`]: feeding rows one at a time
/// returns, after each row, the final state of the optimal sequence over
/// everything seen so far.
#[derive(Debug, Clone)]
pub struct OnlineDecoder {
    centroids: Array2<f64>,
    penalty: f64,
    values: Vec<f64>,
    scratch: Vec<f64>,
    losses: Vec<f64>,
    seen: usize,
}

impl OnlineDecoder {
    pub fn new(centroids: Array2<f64>, penalty: JumpPenalty) -> Self {
        let k = centroids.nrows();
        OnlineDecoder {
            centroids,
            penalty: penalty.0,
            values: vec![0.0; k],
            scratch: vec![0.0; k],
            losses: vec![0.0; k],
            seen: 0,
        }
    }

    pub fn push(&mut self, row: ArrayView1<f64>) -> usize {
        state_losses(row, self.centroids.view(), &mut self.losses);
        let prev = (self.seen > 0).then_some(self.values.as_slice());
        forward_step(prev, &self.losses, self.penalty, &mut self.scratch);
        std::mem::swap(&mut self.values, &mut self.scratch);
        self.seen += 1;
        argmin(&self.values)
    }

    pub fn observations(&self) -> usize {
        self.seen
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpModelConfig {
    pub n_states: usize,
    pub penalty: JumpPenalty,
    pub n_restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for JumpModelConfig {
    fn default() -> Self {
        JumpModelConfig {
            n_states: 2,
            penalty: JumpPenalty(0.0),
            n_restarts: 10,
            max_iter: 300,
            seed: 0,
        }
    }
}

impl JumpModelConfig {
    pub fn new(n_states: usize, penalty: JumpPenalty, seed: u64) -> Self {
        JumpModelConfig {
            n_states,
            penalty,
            seed,
            ..Default::default()
        }
    }
}

/// Result of one coordinate-descent run from a single k-means++ seed.
#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub seed: u64,
    pub centroids: Array2<f64>,
    pub states: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after the initial decode and after every iteration.
    pub objective_trace: Vec<f64>,
}

fn update_centroids(features: ArrayView2<f64>, states: &[usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
    let mut counts = vec![0usize; k];
    for (row, &s) in features.rows().into_iter().zip(states) {
        let mut acc = sums.row_mut(s);
        acc += &row;
        counts[s] += 1;
    }
    for (s, &count) in counts.iter().enumerate() {
        // an empty state keeps its previous centroid
        if count > 0 {
            let mean = &sums.row(s) / count as f64;
            centroids.row_mut(s).assign(&mean);
        }
    }
}

/// Coordinate descent from one k-means++ initialization.
pub fn fit_restart(
    features: ArrayView2<f64>,
    config: &JumpModelConfig,
    seed: u64,
) -> Result<RestartOutcome> {
    let mut centroids = kmeanspp_init(features, config.n_states, seed)?;
    let mut decoded = optimal_states_dp(features, centroids.view(), config.penalty)?;
    let mut trace = vec![decoded.objective];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        iterations += 1;
        update_centroids(features, &decoded.states, &mut centroids);
        let next = optimal_states_dp(features, centroids.view(), config.penalty)?;
        trace.push(next.objective);
        let repeated = next.states == decoded.states;
        decoded = next;
        if repeated {
            converged = true;
            break;
        }
    }
    Ok(RestartOutcome {
        seed,
        centroids,
        states: decoded.states,
        objective: decoded.objective,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// A fitted jump model.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpModelFit {
    pub centroids: Array2<f64>,
    pub penalty: JumpPenalty,
    pub states: Vec<usize>,
    pub objective: f64,
    pub seed: u64,
    pub n_restarts_used: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Number of states with at least one assigned observation.
    pub effective_states: usize,
    /// Every restart ended with fewer than K populated states.
    pub degenerate: bool,
}

impl JumpModelFit {
    pub fn n_states(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn n_jumps(&self) -> usize {
        count_jumps(&self.states)
    }
}

fn populated(states: &[usize], k: usize) -> usize {
    let mut seen = vec![false; k];
    for &s in states {
        seen[s] = true;
    }
    seen.iter().filter(|&&b| b).count()
}

/// Fits the model with `config.n_restarts` seeds `seed, seed + 1, ...` and
/// keeps the restart with the lowest objective (earliest on ties).
///
/// When `volatility_reference` is given, states are relabelled with
/// [`relabel_by_volatility`] against it.
pub fn fit(
    features: ArrayView2<f64>,
    config: &JumpModelConfig,
    volatility_reference: Option<&[f64]>,
) -> Result<JumpModelFit> {
    if config.n_restarts == 0 {
        return Err(Error::invalid("n_restarts must be at least 1"));
    }
    if config.n_states == 0 || features.nrows() < config.n_states {
        return Err(Error::invalid(format!(
            "need 1 <= K <= T, got K={}, T={}",
            config.n_states,
            features.nrows()
        )));
    }
    let outcomes = (0..config.n_restarts)
        .into_par_iter()
        .map(|r| fit_restart(features, config, config.seed.wrapping_add(r as u64)))
        .collect::<Result<Vec<_>>>()?;

    let k = config.n_states;
    let degenerate = k > 1 && outcomes.iter().all(|o| populated(&o.states, k) < k);
    let best = outcomes
        .into_iter()
        .reduce(|best, o| {
            if o.objective < best.objective {
                o
            } else {
                best
            }
        })
        .expect("at least one restart");

    let fit = JumpModelFit {
        effective_states: populated(&best.states, k),
        centroids: best.centroids,
        penalty: config.penalty,
        states: best.states,
        objective: best.objective,
        seed: config.seed,
        n_restarts_used: config.n_restarts,
        iterations: best.iterations,
        converged: best.converged,
        degenerate,
    };
    match volatility_reference {
        Some(returns) => relabel_by_volatility(fit, returns),
        None => Ok(fit),
    }
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Orders state labels by the sample standard deviation of the raw returns
/// assigned to them, so that the highest label is the most volatile state.
/// Leaves the fit unchanged when some state has no observations.
pub fn relabel_by_volatility(fit: JumpModelFit, raw_returns: &[f64]) -> Result<JumpModelFit> {
    if raw_returns.len() != fit.states.len() {
        return Err(Error::invalid(format!(
            "{} returns for {} states",
            raw_returns.len(),
            fit.states.len()
        )));
    }
    let k = fit.n_states();
    let mut buckets = vec![Vec::new(); k];
    for (&s, &r) in fit.states.iter().zip(raw_returns) {
        buckets[s].push(r);
    }
    if buckets.iter().any(Vec::is_empty) {
        return Ok(fit);
    }
    let stds: Vec<f64> = buckets.iter().map(|b| sample_std(b)).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| stds[a].total_cmp(&stds[b]));
    let mut new_label = vec![0; k];
    for (label, &old) in order.iter().enumerate() {
        new_label[old] = label;
    }
    Ok(JumpModelFit {
        centroids: fit.centroids.select(Axis(0), &order),
        states: fit.states.iter().map(|&s| new_label[s]).collect(),
        ..fit
    })
}

/// Row-stochastic transition matrix estimated from a decoded sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEstimate {
    pub matrix: Vec<Vec<f64>>,
}

/// Empirical transition frequencies; a state never left from gets an
/// identity row.
pub fn estimate_transitions(states: &[usize], n_states: usize) -> Result<TransitionEstimate> {
    if states.len() < 2 {
        return Err(Error::invalid(
            "need at least two states to count transitions",
        ));
    }
    if let Some(&s) = states.iter().find(|&&s| s >= n_states) {
        return Err(Error::invalid(format!(
            "state {s} out of range for K={n_states}"
        )));
    }
    let mut counts = vec![vec![0usize; n_states]; n_states];
    for w in states.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    let matrix = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                (0..n_states)
                    .map(|j| if i == j { 1.0 } else { 0.0 })
                    .collect()
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok(TransitionEstimate { matrix })
}

/// A maximal run of one state, `start..=end` in observation indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRun {
    pub state: usize,
    pub start: usize,
    pub end: usize,
}

pub fn run_lengths(states: &[usize]) -> Vec<StateRun> {
    let mut runs: Vec<StateRun> = Vec::new();
    for (t, &s) in states.iter().enumerate() {
        match runs.last_mut() {
            Some(run) if run.state == s => run.end = t,
            _ => runs.push(StateRun {
                state: s,
                start: t,
                end: t,
            }),
        }
    }
    runs
}

/// Inverse of [`run_lengths`]. Runs must tile `0..n` in order.
pub fn expand_runs(runs: &[StateRun]) -> Result<Vec<usize>> {
    let mut states = Vec::new();
    for run in runs {
        if run.start != states.len() || run.end < run.start {
            return Err(Error::invalid(format!(
                "run {}..={} does not continue at {}",
                run.start,
                run.end,
                states.len()
            )));
        }
        let len = run.end - run.start + 1;
        if len > 10_000_000 {
            return Err(Error::invalid("run too long"));
        }
        states.extend(std::iter::repeat_n(run.state, len));
    }
    Ok(states)
}

/// Serialized form of a [`JumpModelFit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRecord {
    pub n_states: usize,
    pub penalty: JumpPenalty,
    pub seed: u64,
    pub objective: f64,
    pub centroids: Vec<Vec<f64>>,
    pub states: Vec<StateRun>,
    pub n_restarts_used: usize,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate: bool,
}

impl From<&JumpModelFit> for FitRecord {
    fn from(fit: &JumpModelFit) -> Self {
        FitRecord {
            n_states: fit.n_states(),
            penalty: fit.penalty,
            seed: fit.seed,
            objective: fit.objective,
            centroids: fit
                .centroids
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            states: run_lengths(&fit.states),
            n_restarts_used: fit.n_restarts_used,
            iterations: fit.iterations,
            converged: fit.converged,
            degenerate: fit.degenerate,
        }
    }
}

impl TryFrom<FitRecord> for JumpModelFit {
    type Error = Error;

    fn try_from(rec: FitRecord) -> Result<Self> {
        let k = rec.n_states;
        if k == 0 || rec.centroids.len() != k {
            return Err(Error::invalid(format!(
                "expected {k} centroids, found {}",
                rec.centroids.len()
            )));
        }
        let dim = rec.centroids[0].len();
        if dim == 0 || rec.centroids.iter().any(|c| c.len() != dim) {
            return Err(Error::invalid(
                "centroids must be non-empty and rectangular",
            ));
        }
        let flat: Vec<f64> = rec.centroids.into_iter().flatten().collect();
        if flat.iter().any(|v| !v.is_finite()) || !rec.objective.is_finite() {
            return Err(Error::invalid("non-finite value in fit record"));
        }
        let states = expand_runs(&rec.states)?;
        if states.iter().any(|&s| s >= k) {
            return Err(Error::invalid("state label out of range"));
        }
        Ok(JumpModelFit {
            centroids: Array2::from_shape_vec((k, dim), flat)
                .map_err(|e| Error::invalid(e.to_string()))?,
            penalty: rec.penalty,
            effective_states: populated(&states, k),
            states,
            objective: rec.objective,
            seed: rec.seed,
            n_restarts_used: rec.n_restarts_used,
            iterations: rec.iterations,
            converged: rec.converged,
            degenerate: rec.degenerate,
        })
    }
}

impl JumpModelFit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FitRecord::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: FitRecord = serde_json::from_str(text)?;
        JumpModelFit::try_from(rec)
    }
}
