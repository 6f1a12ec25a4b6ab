//! One-hidden-layer baseline probe, used to check that a nonlinear reader
//! does not beat the linear probe.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::logistic::{train_probe, Features};
use super::metrics::auc_roc;
use super::optim::{lbfgs, SolverOptions};
use crate::activation_store::stratified_folds;
use crate::error::{domain, Result};
use crate::util::{derive_seed, mean_sd, rng};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden_width: usize,
    pub lambda: f64,
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(hidden_width: usize, seed: u64) -> Self {
        Self { hidden_width, lambda: 0.01, k: 5, max_iter: 3_000, seed }
    }
}

/// `tanh` hidden layer followed by a logistic output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProbe {
    pub hidden_width: usize,
    pub input_dim: usize,
    /// Flattened `[w1 (h*d), b1 (h), w2 (h), b2]`.
    pub params: Vec<f64>,
}

impl MlpProbe {
    fn layout(h: usize, d: usize) -> (usize, usize, usize) {
        (h * d, h * d + h, h * d + 2 * h)
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        forward(&self.params, self.hidden_width, self.input_dim, x, None)
    }
}

fn forward(p: &[f64], h: usize, d: usize, x: &[f64], hidden: Option<&mut [f64]>) -> f64 {
    let (b1, w2, b2) = MlpProbe::layout(h, d);
    let mut z = p[b2];
    let mut tmp = vec![0.0; h];
    let act = match hidden {
        Some(a) => a,
        None => &mut tmp[..],
    };
    for j in 0..h {
        let row = &p[j * d..(j + 1) * d];
        let pre: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + p[b1 + j];
        act[j] = pre.tanh();
        z += p[w2 + j] * act[j];
    }
    z
}

/// Mean logistic loss plus `lambda/2` times the squared norm of both weight
/// matrices (biases unpenalized), with its gradient.
pub fn mlp_objective(p: &[f64], grad: &mut [f64], x: &Features, y: &[u8], h: usize, lambda: f64) -> f64 {
    let d = x.ncols();
    let n = x.nrows() as f64;
    let (b1, w2, b2) = MlpProbe::layout(h, d);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    let mut a = vec![0.0; h];
    for i in 0..x.nrows() {
        let xi = x.row(i);
        let z = forward(p, h, d, xi, Some(&mut a));
        let yi = y[i] as f64;
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - yi * z;
        let r = (1.0 / (1.0 + (-z).exp()) - yi) / n;
        grad[b2] += r;
        for j in 0..h {
            grad[w2 + j] += r * a[j];
            let delta = r * p[w2 + j] * (1.0 - a[j] * a[j]);
            grad[b1 + j] += delta;
            for (g, xv) in grad[j * d..(j + 1) * d].iter_mut().zip(xi) {
                *g += delta * xv;
            }
        }
    }
    let mut reg = 0.0;
    for k in (0..h * d).chain(w2..w2 + h) {
        reg += p[k] * p[k];
        grad[k] += lambda * p[k];
    }
    loss / n + 0.5 * lambda * reg
}

pub fn train_mlp(x: &Features, y: &[u8], cfg: &MlpConfig, seed: u64) -> Result<MlpProbe> {
    if cfg.hidden_width == 0 {
        return Err(domain("hidden width must be at least 1"));
    }
    if !(cfg.lambda > 0.0) {
        return Err(domain("lambda must be positive"));
    }
    let pos = y.iter().filter(|&&t| t == 1).count();
    if x.nrows() < 2 || pos == 0 || pos == y.len() {
        return Err(domain("targets contain a single class"));
    }
    if (0..x.nrows()).any(|i| x.row(i).iter().any(|v| !v.is_finite())) {
        return Err(domain("features contain non-finite values"));
    }
    let (h, d) = (cfg.hidden_width, x.ncols());
    let (b1, w2, _) = MlpProbe::layout(h, d);
    let mut r = rng(seed);
    let mut p = vec![0.0; h * d + 2 * h + 1];
    for v in &mut p[..b1] {
        *v = r.sample::<f64, _>(StandardNormal) / (d as f64).sqrt();
    }
    for v in &mut p[w2..w2 + h] {
        *v = r.sample::<f64, _>(StandardNormal) / (h as f64).sqrt();
    }
    let opts = SolverOptions { grad_tol: 1e-8, max_iter: cfg.max_iter };
    let m = lbfgs(|th, g| mlp_objective(th, g, x, y, h, cfg.lambda), p, 10, opts);
    Ok(MlpProbe { hidden_width: h, input_dim: d, params: m.x })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlpComparison {
    pub hidden_width: usize,
    pub linear_auc: f64,
    pub mlp_auc: f64,
    pub linear_fold_auc: Vec<f64>,
    pub mlp_fold_auc: Vec<f64>,
}

/// Cross-validated AUC of a one-hidden-layer probe next to the linear probe
/// on identical folds.
pub fn mlp_probe_baseline(x: &Features, y: &[u8], hidden_width: usize, seed: u64) -> Result<MlpComparison> {
    mlp_probe_baseline_with(x, y, &MlpConfig::new(hidden_width, seed))
}

pub fn mlp_probe_baseline_with(x: &Features, y: &[u8], cfg: &MlpConfig) -> Result<MlpComparison> {
    let folds = stratified_folds(y, cfg.k, cfg.seed)?;
    let mut linear_fold_auc = Vec::new();
    let mut mlp_fold_auc = Vec::new();
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..y.len()).filter(|i| test.binary_search(i).is_err()).collect();
        let (xt, yt) = (x.subset(&train), train.iter().map(|&i| y[i]).collect::<Vec<_>>());
        let (xs, ys) = (x.subset(test), test.iter().map(|&i| y[i]).collect::<Vec<_>>());
        let lin = train_probe(&xt, &yt, cfg.lambda)?;
        let mlp = train_mlp(&xt, &yt, cfg, derive_seed(cfg.seed, &format!("mlp-fold-{f}")))?;
        let ls: Vec<f64> = (0..xs.nrows()).map(|i| lin.score(xs.row(i))).collect();
        let ms: Vec<f64> = (0..xs.nrows()).map(|i| mlp.score(xs.row(i))).collect();
        linear_fold_auc.push(auc_roc(&ls, &ys)?);
        mlp_fold_auc.push(auc_roc(&ms, &ys)?);
    }
    Ok(MlpComparison {
        hidden_width: cfg.hidden_width,
        linear_auc: mean_sd(&linear_fold_auc).0,
        mlp_auc: mean_sd(&mlp_fold_auc).0,
        linear_fold_auc,
        mlp_fold_auc,
    })
}
