use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::util::substream;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub resamples: usize,
}

/// Sorted statistics of `b` resamples; resample `i` draws from its own
/// stream, so the result does not depend on the worker count.
pub fn bootstrap_distribution<T, F>(samples: &[T], statistic: F, b: usize, seed: u64) -> Vec<f64>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    let n = samples.len();
    let mut stats: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut r = substream(seed, i as u64);
            let draw: Vec<T> = (0..n).map(|_| samples[r.random_range(0..n)].clone()).collect();
            statistic(&draw)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    stats
}

/// Indices of the order statistics bounding a two-sided percentile interval.
pub fn percentile_indices(b: usize, level: f64) -> (usize, usize) {
    let tail = (1.0 - level) / 2.0;
    let lo = (tail * b as f64 + 1e-9).floor() as usize;
    let hi = ((1.0 - tail) * b as f64 - 1e-9).ceil() as usize;
    (lo.min(b - 1), hi.saturating_sub(1).min(b - 1))
}

pub fn bootstrap_ci<T, F>(samples: &[T], statistic: F, b: usize, level: f64, seed: u64) -> Result<BootstrapCi>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    if samples.is_empty() {
        return Err(domain("bootstrap needs at least one sample"));
    }
    if b < 100 {
        return Err(domain(format!("bootstrap needs at least 100 resamples, got {b}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(domain("confidence level must lie strictly between 0 and 1"));
    }
    let estimate = statistic(samples);
    let stats = bootstrap_distribution(samples, &statistic, b, seed);
    let (i, j) = percentile_indices(b, level);
    Ok(BootstrapCi { estimate, lo: stats[i], hi: stats[j], level, resamples: b })
}

/// Mean of a slice; the statistic used for choice fractions.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
