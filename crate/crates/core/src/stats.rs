//! Monte Carlo aggregation and two-sample tests.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub estimate: f64,
    pub std_error: f64,
    pub paths: usize,
    pub seed: u64,
    pub wall_seconds: f64,
}

/// Compensated (Neumaier) sum.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and standard error `sd / sqrt(M)` of per-path values.
pub fn summarize(values: &[f64], seed: u64, wall_seconds: f64) -> Result<McSummary> {
    let m = values.len();
    if m < 2 {
        return Err(Error::TooFewPaths { got: m, min: 2 });
    }
    let mean = neumaier_sum(values.iter().copied()) / m as f64;
    let var = neumaier_sum(values.iter().map(|v| (v - mean).powi(2))) / (m - 1) as f64;
    Ok(McSummary {
        estimate: mean,
        std_error: (var / m as f64).sqrt(),
        paths: m,
        seed,
        wall_seconds,
    })
}

/// Run `kernel(path)` for `path in 0..paths` in parallel and summarize.
///
/// Values are collected in path order before the compensated reduction, so
/// the estimate does not depend on thread scheduling.
pub fn mc_expectation<F>(kernel: F, paths: usize, seed: u64) -> Result<McSummary>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    let (values, secs) = mc_values(kernel, paths)?;
    summarize(&values, seed, secs)
}

/// Per-path values of a vector-valued kernel, in path order.
pub fn mc_values<T, F>(kernel: F, paths: usize) -> Result<(Vec<T>, f64)>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    if paths < 2 {
        return Err(Error::TooFewPaths { got: paths, min: 2 });
    }
    let start = Instant::now();
    let values = (0..paths as u64)
        .into_par_iter()
        .map(&kernel)
        .collect::<Result<Vec<_>>>()?;
    Ok((values, start.elapsed().as_secs_f64()))
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x: Vec<f64> = a.to_vec();
    let mut y: Vec<f64> = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic 1% critical value `c(0.01) sqrt((n + m) / (n m))`.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    const C_ALPHA: f64 = 1.627_6;
    C_ALPHA * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}
