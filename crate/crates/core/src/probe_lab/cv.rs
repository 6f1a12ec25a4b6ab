//! Cross-validated probe evaluation and layer sweeps.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::logistic::{train_probe, Features, LinearProbe};
use super::metrics::{auc_roc, f1_score};
use crate::activation_store::{stratified_folds, ActivationDataset, Axis};
use crate::error::{domain, Result};
use crate::util::{derive_seed, mean_sd, substream};

/// The regularization grid searched by default.
pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [0.001, 0.01, 0.1, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub lambda_grid: Vec<f64>,
    pub k: usize,
    pub seed: u64,
    /// Share of each training split held out to select lambda.
    pub holdout_fraction: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(), k: 5, seed: 0, holdout_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaResult {
    pub lambda: f64,
    /// Test-fold AUC, one per fold.
    pub fold_auc: Vec<f64>,
    /// AUC on the held-out part of each training split.
    pub val_auc: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_val_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub layer: usize,
    pub axis: Axis,
    pub lambdas: Vec<LambdaResult>,
    pub chosen_lambda: f64,
}

impl CvResult {
    pub fn chosen(&self) -> &LambdaResult {
        self.lambdas
            .iter()
            .find(|l| l.lambda == self.chosen_lambda)
            .expect("chosen lambda is one of the grid entries")
    }

    pub fn fit_count(&self) -> usize {
        self.lambdas.iter().map(|l| l.fold_auc.len()).sum()
    }
}

/// Splits training positions into (fit, holdout), stratified by class.
fn holdout_split(
    train: &[usize],
    targets: &[u8],
    fraction: f64,
    seed: u64,
    fold: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = substream(derive_seed(seed, "holdout"), fold as u64);
    let mut fit = Vec::new();
    let mut hold = Vec::new();
    for class in [0u8, 1] {
        let mut members: Vec<usize> = train.iter().copied().filter(|&i| targets[i] == class).collect();
        if members.len() < 2 {
            return Err(domain(format!(
                "training split of fold {fold} has {} records of class {class}; need 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n_hold = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1);
        hold.extend_from_slice(&members[..n_hold]);
        fit.extend_from_slice(&members[n_hold..]);
    }
    fit.sort_unstable();
    hold.sort_unstable();
    Ok((fit, hold))
}

/// Stratified k-fold evaluation of one (layer, attribute) cell over a lambda
/// grid. Lambda is chosen by mean held-out AUC inside the training splits,
/// ties going to the smaller lambda.
pub fn cross_validate(ds: &ActivationDataset, layer: usize, axis: Axis, cfg: &CvConfig) -> Result<CvResult> {
    if cfg.lambda_grid.is_empty() {
        return Err(domain("lambda grid is empty"));
    }
    let (idx, targets) = ds.eligible(axis);
    let x = Features::from_dataset(ds, layer, &idx)?;
    cross_validate_features(&x, &targets, layer, axis, cfg)
}

pub fn cross_validate_features(
    x: &Features,
    targets: &[u8],
    layer: usize,
    axis: Axis,
    cfg: &CvConfig,
) -> Result<CvResult> {
    if cfg.lambda_grid.is_empty() {
        return Err(domain("lambda grid is empty"));
    }
    let mut grid = cfg.lambda_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let folds = stratified_folds(targets, cfg.k, cfg.seed)?;
    let all: Vec<usize> = (0..targets.len()).collect();
    let splits = folds
        .iter()
        .enumerate()
        .map(|(f, test)| {
            let train: Vec<usize> = all.iter().copied().filter(|i| test.binary_search(i).is_err()).collect();
            let (fit, hold) = holdout_split(&train, targets, cfg.holdout_fraction, cfg.seed, f)?;
            Ok((fit, hold, test.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|l| (0..splits.len()).map(move |f| (l, f))).collect();
    let scores = cells
        .par_iter()
        .map(|&(l, f)| {
            let (fit_idx, hold_idx, test_idx) = &splits[f];
            let sub = |ix: &[usize]| (x.subset(ix), ix.iter().map(|&i| targets[i]).collect::<Vec<u8>>());
            let (xf, yf) = sub(fit_idx);
            let model = train_probe(&xf, &yf, grid[l])?;
            let auc_on = |ix: &[usize]| {
                let (xs, ys) = sub(ix);
                let s: Vec<f64> = (0..xs.nrows()).map(|i| model.score(xs.row(i))).collect();
                auc_roc(&s, &ys)
            };
            Ok((auc_on(hold_idx)?, auc_on(test_idx)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;

    let lambdas: Vec<LambdaResult> = grid
        .iter()
        .enumerate()
        .map(|(l, &lambda)| {
            let cell = &scores[l * splits.len()..(l + 1) * splits.len()];
            let val_auc: Vec<f64> = cell.iter().map(|c| c.0).collect();
            let fold_auc: Vec<f64> = cell.iter().map(|c| c.1).collect();
            let (mean_auc, std_auc) = mean_sd(&fold_auc);
            let (mean_val_auc, _) = mean_sd(&val_auc);
            LambdaResult { lambda, fold_auc, val_auc, mean_auc, std_auc, mean_val_auc }
        })
        .collect();
    let mut best = 0;
    for (i, l) in lambdas.iter().enumerate() {
        if l.mean_val_auc > lambdas[best].mean_val_auc {
            best = i;
        }
    }
    Ok(CvResult { layer, axis, chosen_lambda: lambdas[best].lambda, lambdas })
}

/// Per-layer cross-validation results and the selected layer per attribute.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ProbeReport {
    pub results: Vec<CvResult>,
    pub optimal_layer: BTreeMap<Axis, usize>,
    pub turn_f1: Option<TurnTable>,
}

impl ProbeReport {
    pub fn from_results(mut results: Vec<CvResult>) -> Self {
        results.sort_by_key(|r| (r.axis, r.layer));
        let mut optimal_layer: BTreeMap<Axis, usize> = BTreeMap::new();
        let mut best_auc: BTreeMap<Axis, f64> = BTreeMap::new();
        for r in &results {
            let auc = r.chosen().mean_auc;
            // Results are sorted by layer, so a strict improvement keeps the
            // lowest layer on ties.
            if best_auc.get(&r.axis).is_none_or(|&b| auc > b) {
                best_auc.insert(r.axis, auc);
                optimal_layer.insert(r.axis, r.layer);
            }
        }
        Self { results, optimal_layer, turn_f1: None }
    }

    /// Union of two reports; the outcome does not depend on argument order.
    pub fn merge(self, other: ProbeReport) -> ProbeReport {
        let mut all = self.results;
        for r in other.results {
            if !all.iter().any(|x| x.axis == r.axis && x.layer == r.layer) {
                all.push(r);
            }
        }
        let turn_f1 = self.turn_f1.or(other.turn_f1);
        let mut out = ProbeReport::from_results(all);
        out.turn_f1 = turn_f1;
        out
    }

    pub fn result(&self, axis: Axis, layer: usize) -> Option<&CvResult> {
        self.results.iter().find(|r| r.axis == axis && r.layer == layer)
    }

    /// Chosen lambda at the optimal layer of `axis`.
    pub fn chosen_lambda(&self, axis: Axis) -> Option<f64> {
        let layer = *self.optimal_layer.get(&axis)?;
        self.result(axis, layer).map(|r| r.chosen_lambda)
    }

    pub fn best(&self, axis: Axis) -> Option<&CvResult> {
        self.result(axis, *self.optimal_layer.get(&axis)?)
    }

    /// Long-format fold table: `layer,attribute,lambda,fold,auc`.
    pub fn folds_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "attribute", "lambda", "fold", "auc"])?;
        for r in &self.results {
            for l in &r.lambdas {
                for (f, auc) in l.fold_auc.iter().enumerate() {
                    w.write_record([
                        r.layer.to_string(),
                        r.axis.to_string(),
                        l.lambda.to_string(),
                        f.to_string(),
                        auc.to_string(),
                    ])?;
                }
            }
        }
        finish_csv(w)
    }

    /// Per-layer curve at the chosen lambda: `layer,attribute,mean_auc,std_auc`.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "attribute", "mean_auc", "std_auc"])?;
        for r in &self.results {
            let c = r.chosen();
            w.write_record([
                r.layer.to_string(),
                r.axis.to_string(),
                c.mean_auc.to_string(),
                c.std_auc.to_string(),
            ])?;
        }
        finish_csv(w)
    }
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Cross-validates every layer (or the supplied subset) for one attribute.
pub fn layer_sweep(ds: &ActivationDataset, axis: Axis, cfg: &CvConfig) -> Result<ProbeReport> {
    let layers: Vec<usize> = (0..ds.layer_count).collect();
    layer_sweep_layers(ds, axis, &layers, cfg)
}

pub fn layer_sweep_layers(
    ds: &ActivationDataset,
    axis: Axis,
    layers: &[usize],
    cfg: &CvConfig,
) -> Result<ProbeReport> {
    if ds.layer_count == 0 {
        return Err(domain("dataset has no layers"));
    }
    let results = layers
        .iter()
        .map(|&l| cross_validate(ds, l, axis, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport::from_results(results))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnRow {
    pub turn: u32,
    pub axis: Axis,
    pub f1: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TurnTable {
    pub rows: Vec<TurnRow>,
    pub warnings: Vec<String>,
}

impl TurnTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["turn", "attribute", "f1", "n"])?;
        for r in &self.rows {
            w.write_record([r.turn.to_string(), r.axis.to_string(), r.f1.to_string(), r.n.to_string()])?;
        }
        finish_csv(w)
    }
}

/// F1 per attribute per turn index, predicting the positive class when the
/// probe logit is above zero. Turns with no labeled record are reported as
/// warnings rather than rows.
pub fn eval_by_turn(ds: &ActivationDataset, probes: &[LinearProbe]) -> Result<TurnTable> {
    let max_turn = ds.records.iter().map(|r| r.turn_index).max().unwrap_or(0);
    let mut table = TurnTable::default();
    for probe in probes {
        let axis = probe.attribute_axis;
        let mut groups: BTreeMap<u32, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
        for (i, r) in ds.records.iter().enumerate() {
            if let Some(t) = r.labels.target(axis) {
                let logit = probe.score_record(ds, i)?;
                let g = groups.entry(r.turn_index).or_default();
                g.0.push(u8::from(logit > 0.0));
                g.1.push(t);
            }
        }
        for turn in 1..=max_turn {
            match groups.get(&turn) {
                Some((pred, truth)) => table.rows.push(TurnRow {
                    turn,
                    axis,
                    f1: f1_score(pred, truth)?,
                    n: truth.len(),
                }),
                None => table
                    .warnings
                    .push(format!("turn {turn}: no records labeled on {axis}; omitted")),
            }
        }
    }
    Ok(table)
}
