use crate::error::{domain, Result};

/// Area under the ROC curve: the probability that a random positive outscores
/// a random negative, ties counting one half.
///
/// Computed from midranks (Mann-Whitney U). Midrank sums are exact
/// half-integers, so the result equals the pairwise count exactly.
pub fn auc_roc(scores: &[f64], targets: &[u8]) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(domain(format!(
            "auc_roc: {} scores but {} targets",
            scores.len(),
            targets.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(domain("auc_roc: scores must be finite"));
    }
    let n_pos = targets.iter().filter(|&&t| t == 1).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(domain("auc_roc: both classes must be present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled midranks of positives keeps everything integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, doubled midrank = i + j + 2
        let twice_mid = (i + j + 2) as u128;
        for &k in &order[i..=j] {
            if targets[k] == 1 {
                twice_rank_sum += twice_mid;
            }
        }
        i = j + 1;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok((twice_u as f64 / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// F1 of the positive class; 0 when precision + recall is 0.
pub fn f1_score(predictions: &[u8], targets: &[u8]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(domain(format!(
            "f1_score: {} predictions but {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(targets) {
        match (p == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}
