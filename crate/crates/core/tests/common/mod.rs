//! Reference implementations used as oracles. They favour directness over
//! speed and share no code with the library beyond its public types.

#![allow(dead_code)]

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
}

fn half_sq(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

fn row(m: ArrayView2<f64>, i: usize) -> Vec<f64> {
    m.row(i).to_vec()
}

/// Objective of `states` computed term by term.
pub fn objective(y: ArrayView2<f64>, theta: ArrayView2<f64>, states: &[usize], lambda: f64) -> f64 {
    let loss: f64 = states
        .iter()
        .enumerate()
        .map(|(t, &s)| half_sq(&row(y, t), &row(theta, s)))
        .sum();
    let jumps = states.windows(2).filter(|w| w[0] != w[1]).count();
    loss + lambda * jumps as f64
}

/// Minimum objective over all K^T state sequences.
pub fn brute_force_dp(
    y: ArrayView2<f64>,
    theta: ArrayView2<f64>,
    lambda: f64,
) -> (Vec<usize>, f64) {
    let (t, k) = (y.nrows(), theta.nrows());
    let mut seq = vec![0usize; t];
    let mut best = (seq.clone(), f64::INFINITY);
    loop {
        let v = objective(y, theta, &seq, lambda);
        if v < best.1 {
            best = (seq.clone(), v);
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == t {
                return best;
            }
            seq[i] += 1;
            if seq[i] < k {
                break;
            }
            seq[i] = 0;
            i += 1;
        }
    }
}

/// Lloyd's algorithm from the given centroids: nearest-centroid assignment
/// (lowest index on ties), mean update with empty clusters left in place,
/// stopping when the assignment repeats. Returns the half sum of squares.
pub fn lloyd(y: ArrayView2<f64>, init: Array2<f64>, max_iter: usize) -> f64 {
    let (n, d, k) = (y.nrows(), y.ncols(), init.nrows());
    let mut centroids: Vec<Vec<f64>> = (0..k).map(|j| init.row(j).to_vec()).collect();
    let assign = |c: &Vec<Vec<f64>>| -> Vec<usize> {
        (0..n)
            .map(|i| {
                let yi = row(y, i);
                let mut best = 0;
                for j in 1..k {
                    if half_sq(&yi, &c[j]) < half_sq(&yi, &c[best]) {
                        best = j;
                    }
                }
                best
            })
            .collect()
    };
    let mut labels = assign(&centroids);
    for _ in 0..max_iter {
        for (j, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == j).collect();
            if members.is_empty() {
                continue;
            }
            *centroid = (0..d)
                .map(|c| members.iter().map(|&i| y[[i, c]]).sum::<f64>() / members.len() as f64)
                .collect();
        }
        let next = assign(&centroids);
        if next == labels {
            break;
        }
        labels = next;
    }
    (0..n)
        .map(|i| half_sq(&row(y, i), &centroids[labels[i]]))
        .sum()
}

fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Likelihood and per-day state marginals by summing over every path.
pub fn enumerate_paths(
    initial: &[f64],
    transitions: &[Vec<f64>],
    means: &[f64],
    stds: &[f64],
    x: &[f64],
) -> (f64, Vec<Vec<f64>>) {
    let (t, k) = (x.len(), initial.len());
    let mut marginals = vec![vec![0.0; k]; t];
    let mut total = 0.0;
    let mut seq = vec![0usize; t];
    loop {
        let mut p = initial[seq[0]] * normal_pdf(x[0], means[seq[0]], stds[seq[0]]);
        for i in 1..t {
            p *= transitions[seq[i - 1]][seq[i]] * normal_pdf(x[i], means[seq[i]], stds[seq[i]]);
        }
        total += p;
        for (i, &s) in seq.iter().enumerate() {
            marginals[i][s] += p;
        }
        let mut i = 0;
        loop {
            if i == t {
                for m in &mut marginals {
                    for v in m.iter_mut() {
                        *v /= total;
                    }
                }
                return (total, marginals);
            }
            seq[i] += 1;
            if seq[i] < k {
                break;
            }
            seq[i] = 0;
            i += 1;
        }
    }
}

/// The eight statistics recomputed with plain products and loops.
pub struct SpreadsheetMetrics {
    pub ann_return: f64,
    pub ann_vol: f64,
    pub sharpe: Option<f64>,
    pub downside_dev: f64,
    pub sortino: Option<f64>,
    pub max_drawdown: f64,
    pub calmar: Option<f64>,
    pub turnover: f64,
}

impl SpreadsheetMetrics {
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.ann_return),
            Some(self.ann_vol),
            self.sharpe,
            Some(self.downside_dev),
            self.sortino,
            Some(self.max_drawdown),
            self.calmar,
            Some(self.turnover),
        ]
    }
}

pub fn spreadsheet_metrics(r: &[f64], rf: &[f64], w: Option<&[f64]>) -> SpreadsheetMetrics {
    let t = r.len() as f64;
    let growth: f64 = r.iter().map(|x| 1.0 + x).product();
    let rf_growth: f64 = rf.iter().map(|x| 1.0 + x).product();
    let ann_return = growth.powf(252.0 / t) - 1.0;
    let ann_rf = rf_growth.powf(252.0 / t) - 1.0;
    let mean = r.iter().sum::<f64>() / t;
    let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / t;
    let ann_vol = var.sqrt() * 252f64.sqrt();
    let downside_dev = (252.0 * r.iter().map(|x| x.min(0.0).powi(2)).sum::<f64>() / t).sqrt();

    // equity with the starting capital at index 0
    let mut equity = vec![1.0];
    for x in r {
        equity.push(equity.last().unwrap() * (1.0 + x));
    }
    let mut mdd: f64 = 0.0;
    for i in 1..equity.len() {
        let peak = equity[..=i].iter().cloned().fold(f64::MIN, f64::max);
        mdd = mdd.min(equity[i] / peak - 1.0);
    }
    let turnover = w.map_or(0.0, |w| {
        (1..w.len()).map(|i| (w[i] - w[i - 1]).abs()).sum::<f64>() / t
    });
    let div = |a: f64, b: f64| if b == 0.0 { None } else { Some(a / b) };
    SpreadsheetMetrics {
        ann_return,
        ann_vol,
        sharpe: div(ann_return - ann_rf, ann_vol),
        downside_dev,
        sortino: div(ann_return - ann_rf, downside_dev),
        max_drawdown: mdd,
        calmar: div(ann_return, mdd.abs()),
        turnover,
    }
}

pub fn daily_dates(n: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(1990, 1, 1).unwrap();
    (0..n)
        .map(|i| start + chrono::Days::new(i as u64))
        .collect()
}

/// Relative difference with an absolute floor of 1.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
