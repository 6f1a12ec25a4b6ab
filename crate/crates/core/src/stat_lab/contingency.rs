use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{domain, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
}

/// Pearson chi-square test of independence on an r x k table of counts.
pub fn chi_square(table: &[Vec<f64>]) -> Result<ChiSquareResult> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 {
        return Err(domain("chi-square needs at least a 2x2 table"));
    }
    if table.iter().any(|r| r.len() != cols) {
        return Err(domain("chi-square table rows differ in length"));
    }
    if table.iter().flatten().any(|&c| !(c >= 0.0 && c.is_finite())) {
        return Err(domain("chi-square counts must be finite and non-negative"));
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    if row_sums.iter().chain(&col_sums).any(|&s| s == 0.0) {
        return Err(domain("chi-square table has a zero marginal"));
    }
    let total: f64 = row_sums.iter().sum();
    let mut stat = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &o) in r.iter().enumerate() {
            let e = row_sums[i] * col_sums[j] / total;
            stat += (o - e) * (o - e) / e;
        }
    }
    let df = (rows - 1) * (cols - 1);
    let p = ChiSquared::new(df as f64).expect("df positive").sf(stat).clamp(0.0, 1.0);
    Ok(ChiSquareResult { statistic: stat, p_value: p, df })
}

/// Cohen's kappa between two raters over the same units.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(domain(format!("rater label vectors differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(domain("kappa needs at least one rated unit"));
    }
    let n = a.len() as f64;
    let mut ma: BTreeMap<&T, f64> = BTreeMap::new();
    let mut mb: BTreeMap<&T, f64> = BTreeMap::new();
    let mut agree = 0.0;
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1.0;
        *mb.entry(y).or_default() += 1.0;
        if x == y {
            agree += 1.0;
        }
    }
    let po = agree / n;
    let pe: f64 = ma.iter().map(|(k, ca)| ca / n * mb.get(k).copied().unwrap_or(0.0) / n).sum();
    if (1.0 - pe).abs() < 1e-15 {
        return Err(domain("kappa is undefined when chance agreement is 1"));
    }
    Ok((po - pe) / (1.0 - pe))
}
