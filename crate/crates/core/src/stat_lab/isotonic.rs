use crate::error::{domain, Result};

/// Least-squares nondecreasing fit of `y` in index order.
pub fn isotonic_fit(y: &[f64]) -> Vec<f64> {
    isotonic_fit_weighted(y, &vec![1.0; y.len()])
}

/// Weighted pool-adjacent-violators. Each pooled block takes its weighted
/// mean.
pub fn isotonic_fit_weighted(y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&v, &wt) in y.iter().zip(w) {
        blocks.push((v, wt, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let wt = w1 + w2;
            *blocks.last_mut().expect("two blocks present") = ((m1 * w1 + m2 * w2) / wt, wt, c1 + c2);
        }
    }
    blocks.into_iter().flat_map(|(m, _, c)| std::iter::repeat_n(m, c)).collect()
}

/// Isotonic fit of `y` against `x` sorted ascending. Points sharing an `x`
/// are pooled first, so they receive the same fitted value.
pub fn isotonic_fit_xy(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(domain(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.windows(2).any(|p| !(p[0] <= p[1])) {
        return Err(domain("x must be sorted ascending"));
    }
    let mut means = Vec::new();
    let mut weights = Vec::new();
    let mut counts = Vec::new();
    let mut i = 0;
    while i < x.len() {
        let mut j = i;
        while j + 1 < x.len() && x[j + 1] == x[i] {
            j += 1;
        }
        let c = j - i + 1;
        means.push(y[i..=j].iter().sum::<f64>() / c as f64);
        weights.push(c as f64);
        counts.push(c);
        i = j + 1;
    }
    let fit = isotonic_fit_weighted(&means, &weights);
    Ok(fit.into_iter().zip(counts).flat_map(|(v, c)| std::iter::repeat_n(v, c)).collect())
}
