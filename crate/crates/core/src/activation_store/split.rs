use rand::seq::SliceRandom;

use super::{ActivationDataset, Axis};
use crate::error::{domain, Result};
use crate::util::rng;

/// Stratified `k`-fold partition of positions `0..targets.len()`.
///
/// Each class is shuffled with the seeded generator and dealt round-robin;
/// the second class continues dealing where the first stopped so fold sizes
/// stay within one of each other. Indices inside a fold are sorted.
pub fn stratified_folds(targets: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(domain(format!("stratified split needs k >= 2, got {k}")));
    }
    let mut rng = rng(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0usize;
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> =
            targets.iter().enumerate().filter(|(_, &t)| t == class).map(|(i, _)| i).collect();
        if members.len() < k {
            return Err(domain(format!(
                "class {class} has {} records, stratified {k}-fold split needs at least {k}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for m in members {
            folds[next].push(m);
            next = (next + 1) % k;
        }
    }
    if targets.iter().any(|&t| t > 1) {
        return Err(domain("targets must be binary"));
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// `k` disjoint folds of record indices over the records whose label on
/// `axis` is known.
pub fn split_stratified(
    ds: &ActivationDataset,
    axis: Axis,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let (idx, targets) = ds.eligible(axis);
    let folds = stratified_folds(&targets, k, seed)?;
    Ok(folds.into_iter().map(|f| f.into_iter().map(|p| idx[p]).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation_store::{ActivationRecord, AttributeLabel, CueKind};
    use proptest::prelude::*;

    fn ds_with(pos: usize, neg: usize, unknown: usize) -> ActivationDataset {
        let mut ds = ActivationDataset::new("m", 1, 1);
        let mut push = |labels: AttributeLabel| {
            let i = ds.records.len();
            ds.records.push(ActivationRecord {
                prompt_id: format!("p{i}"),
                turn_index: 1,
                language_code: "en".into(),
                cue_kind: CueKind::Explicit,
                item_id: None,
                labels,
                vectors: vec![vec![1.0]],
            });
        };
        for _ in 0..pos {
            push(AttributeLabel::unknown().with_target(Axis::Gender, true));
        }
        for _ in 0..neg {
            push(AttributeLabel::unknown().with_target(Axis::Gender, false));
        }
        for _ in 0..unknown {
            push(AttributeLabel::unknown());
        }
        ds
    }

    fn class_counts(ds: &ActivationDataset, fold: &[usize]) -> (usize, usize) {
        let pos = fold.iter().filter(|&&i| ds.records[i].labels.target(Axis::Gender) == Some(1)).count();
        (pos, fold.len() - pos)
    }

    #[test]
    fn exact_divisibility() {
        let ds = ds_with(5, 5, 0);
        let folds = split_stratified(&ds, Axis::Gender, 5, 1).unwrap();
        for f in &folds {
            assert_eq!(class_counts(&ds, f), (1, 1));
        }
    }

    #[test]
    fn six_five_gives_one_fold_of_three() {
        let ds = ds_with(6, 5, 0);
        let folds = split_stratified(&ds, Axis::Gender, 5, 9).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        for f in &folds {
            let (p, n) = class_counts(&ds, f);
            assert!(p.abs_diff(n) <= 1);
        }
    }

    #[test]
    fn deterministic_and_excludes_unknown() {
        let ds = ds_with(7, 8, 4);
        let a = split_stratified(&ds, Axis::Gender, 3, 42).unwrap();
        let b = split_stratified(&ds, Axis::Gender, 3, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(Vec::len).sum::<usize>(), 15);
        assert!(a.iter().flatten().all(|&i| i < 15));
    }

    #[test]
    fn insufficient_class_is_an_error() {
        let ds = ds_with(4, 10, 0);
        assert!(split_stratified(&ds, Axis::Gender, 5, 0).is_err());
        assert!(split_stratified(&ds, Axis::Gender, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(pos in 2usize..40, neg in 2usize..40, k in 2usize..6, seed in any::<u64>()) {
            prop_assume!(pos >= k && neg >= k);
            let ds = ds_with(pos, neg, 3);
            let folds = split_stratified(&ds, Axis::Gender, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..pos + neg).collect::<Vec<_>>());
            for f in &folds {
                let (p, n) = class_counts(&ds, f);
                prop_assert!((p as f64 - pos as f64 / k as f64).abs() < 1.0);
                prop_assert!((n as f64 - neg as f64 / k as f64).abs() < 1.0);
            }
        }
    }
}
