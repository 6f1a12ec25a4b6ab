use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    Spearman,
    Pearson,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub coefficient: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: CorrelationMethod,
}

/// Largest sample size for which the Spearman p-value is computed by full
/// enumeration of permutations.
pub const EXACT_SPEARMAN_MAX_N: usize = 9;

/// Midranks (1-based); tied values share the mean of their positions.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(domain(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(domain(format!("correlation needs at least {min} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(domain("correlation input contains non-finite values"));
    }
    Ok(())
}

fn product_moment(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(domain("correlation is undefined for a constant input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` from a t distribution with `n - 2` degrees of
/// freedom.
fn t_p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df positive");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check_pair(x, y, 3)?;
    let r = product_moment(x, y)?;
    Ok(CorrelationResult { coefficient: r, p_value: t_p_value(r, x.len()), n: x.len(), method: CorrelationMethod::Pearson })
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check_pair(x, y, 3)?;
    let (rx, ry) = (midranks(x), midranks(y));
    let rho = product_moment(&rx, &ry)?;
    let p = if x.len() <= EXACT_SPEARMAN_MAX_N { exact_p(&rx, &ry, rho) } else { t_p_value(rho, x.len()) };
    Ok(CorrelationResult { coefficient: rho, p_value: p, n: x.len(), method: CorrelationMethod::Spearman })
}

/// Share of all permutations of `ry` whose |rho| reaches the observed one.
fn exact_p(rx: &[f64], ry: &[f64], rho: f64) -> f64 {
    let mut perm = ry.to_vec();
    let (mut hits, mut total) = (0u64, 0u64);
    let target = rho.abs() - 1e-12;
    heap_permute(&mut perm, rx.len(), &mut |p| {
        total += 1;
        if product_moment(rx, p).map(|r| r.abs() >= target).unwrap_or(false) {
            hits += 1;
        }
    });
    hits as f64 / total as f64
}

fn heap_permute(a: &mut [f64], k: usize, f: &mut impl FnMut(&[f64])) {
    if k <= 1 {
        f(a);
        return;
    }
    for i in 0..k - 1 {
        heap_permute(a, k - 1, f);
        if k.is_multiple_of(2) {
            a.swap(i, k - 1);
        } else {
            a.swap(0, k - 1);
        }
    }
    heap_permute(a, k - 1, f);
}
