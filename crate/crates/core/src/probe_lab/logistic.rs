//! L2-regularized logistic regression probes.
//!
//! Objective, with `z = w·x + b`:
//!
//! ```text
//! f(w, b) = mean_i [ log(1 + exp(z_i)) - y_i z_i ] + lambda/2 * |w|^2
//! ```
//!
//! The bias is not penalized. Minimization starts at zero and runs a damped
//! Newton method (or L-BFGS for wide inputs) to a gradient norm of 1e-8.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optim::{lbfgs, newton, Minimum, SolverOptions};
use crate::activation_store::{encode, ActivationDataset, Axis};
use crate::error::{domain, Result};
use crate::util::{atomic_write, sha256_hex};

/// Inputs wider than this use L-BFGS instead of Newton under [`Solver::Auto`].
pub const NEWTON_MAX_DIM: usize = 512;

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(domain("feature rows have differing lengths"));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn subset(&self, idx: &[usize]) -> Features {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Features { rows: idx.len(), cols: self.cols, data }
    }

    /// Features of `records` at `layer`, RMS-normalized unless the dataset
    /// already is.
    pub fn from_dataset(ds: &ActivationDataset, layer: usize, records: &[usize]) -> Result<Self> {
        if layer >= ds.layer_count {
            return Err(domain(format!(
                "layer {layer} is not in the dataset ({} layers)",
                ds.layer_count
            )));
        }
        let rows = records.iter().map(|&r| ds.feature(r, layer)).collect::<Result<Vec<_>>>()?;
        let mut f = Features::from_rows(&rows)?;
        f.cols = ds.hidden_dim;
        Ok(f)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The regularized logistic objective over parameters `[w; b]`.
pub struct LogisticObjective {
    design: DMatrix<f64>,
    y: DVector<f64>,
    lambda: f64,
}

impl LogisticObjective {
    pub fn new(features: &Features, targets: &[u8], lambda: f64) -> Result<Self> {
        let (n, d) = (features.nrows(), features.ncols());
        if targets.len() != n {
            return Err(domain(format!("{n} feature rows but {} targets", targets.len())));
        }
        let design = DMatrix::from_fn(n, d + 1, |i, j| if j < d { features.row(i)[j] } else { 1.0 });
        let y = DVector::from_iterator(n, targets.iter().map(|&t| t as f64));
        Ok(Self { design, y, lambda })
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn eval(&self, theta: &[f64], grad: &mut [f64], hess: Option<&mut DMatrix<f64>>) -> f64 {
        let n = self.design.nrows() as f64;
        let d = self.design.ncols() - 1;
        let th = DVector::from_column_slice(theta);
        let z = &self.design * &th;
        let mut loss = 0.0;
        let mut resid = DVector::zeros(z.len());
        for i in 0..z.len() {
            loss += softplus(z[i]) - self.y[i] * z[i];
            resid[i] = (sigmoid(z[i]) - self.y[i]) / n;
        }
        let w2: f64 = theta[..d].iter().map(|w| w * w).sum();
        let value = loss / n + 0.5 * self.lambda * w2;
        let g = self.design.tr_mul(&resid);
        for j in 0..=d {
            grad[j] = g[j] + if j < d { self.lambda * theta[j] } else { 0.0 };
        }
        if let Some(h) = hess {
            let mut weighted = self.design.clone();
            for i in 0..z.len() {
                let p = sigmoid(z[i]);
                let s = (p * (1.0 - p) / n).sqrt();
                weighted.row_mut(i).scale_mut(s);
            }
            *h = weighted.tr_mul(&weighted);
            for j in 0..d {
                h[(j, j)] += self.lambda;
            }
        }
        value
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; theta.len()];
        self.eval(theta, &mut g, None)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.eval(theta, &mut g, None);
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    /// Newton up to [`NEWTON_MAX_DIM`] features, L-BFGS beyond.
    #[default]
    Auto,
    Newton,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    pub solver: Solver,
    pub solver_options: SolverOptions,
}

/// Result of [`train_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticFit {
    pub fn score(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }

    pub fn direction(&self) -> Result<Vec<f64>> {
        unit(&self.weights)
    }
}

fn unit(w: &[f64]) -> Result<Vec<f64>> {
    let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(domain("probe weights have zero or non-finite norm; no direction"));
    }
    Ok(w.iter().map(|x| x / n).collect())
}

pub fn train_probe(features: &Features, targets: &[u8], lambda: f64) -> Result<LogisticFit> {
    train_probe_with(features, targets, lambda, &TrainOptions::default())
}

pub fn train_probe_with(
    features: &Features,
    targets: &[u8],
    lambda: f64,
    opts: &TrainOptions,
) -> Result<LogisticFit> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    if features.nrows() < 2 {
        return Err(domain("need at least two samples"));
    }
    if targets.iter().any(|&t| t > 1) {
        return Err(domain("targets must be binary"));
    }
    let pos = targets.iter().filter(|&&t| t == 1).count();
    if pos == 0 || pos == targets.len() {
        return Err(domain("targets contain a single class"));
    }
    if features.data.iter().any(|x| !x.is_finite()) {
        return Err(domain("features contain non-finite values"));
    }
    let obj = LogisticObjective::new(features, targets, lambda)?;
    let x0 = vec![0.0; obj.dim()];
    let use_newton = match opts.solver {
        Solver::Auto => features.ncols() <= NEWTON_MAX_DIM,
        Solver::Newton => true,
        Solver::Lbfgs => false,
    };
    let m: Minimum = if use_newton {
        newton(|x, g, h| obj.eval(x, g, h), x0, opts.solver_options)
    } else {
        lbfgs(|x, g| obj.eval(x, g, None), x0, 10, opts.solver_options)
    };
    let d = features.ncols();
    Ok(LogisticFit {
        weights: m.x[..d].to_vec(),
        bias: m.x[d],
        lambda,
        objective: m.value,
        grad_norm: m.grad_norm,
        iterations: m.iterations,
        converged: m.converged,
    })
}

/// A trained probe for one attribute at one layer. Its unit weight vector is
/// the attribute direction used for steering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub attribute_axis: Axis,
    pub layer_index: usize,
    pub lambda: f64,
    pub bias: f64,
    pub weights: Vec<f64>,
    pub trained_on: String,
}

impl LinearProbe {
    pub fn from_fit(axis: Axis, layer: usize, fit: &LogisticFit, trained_on: String) -> Self {
        Self {
            attribute_axis: axis,
            layer_index: layer,
            lambda: fit.lambda,
            bias: fit.bias,
            weights: fit.weights.clone(),
            trained_on,
        }
    }

    /// Logit `w·x + b`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(domain(format!(
                "vector has dimension {}, probe expects {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias)
    }

    /// Unit-norm weight direction.
    pub fn direction(&self) -> Result<Vec<f64>> {
        unit(&self.weights)
    }

    /// Logit of dataset record `record` at the probe's layer.
    pub fn score_record(&self, ds: &ActivationDataset, record: usize) -> Result<f64> {
        if self.layer_index >= ds.layer_count {
            return Err(domain(format!(
                "probe layer {} is not in the dataset ({} layers)",
                self.layer_index, ds.layer_count
            )));
        }
        self.score(&ds.feature(record, self.layer_index)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Hex SHA-256 of the dataset's container encoding.
pub fn dataset_fingerprint(ds: &ActivationDataset) -> Result<String> {
    Ok(sha256_hex(&encode(ds)?))
}

/// Fits a probe on every record with a known label on `axis`.
pub fn fit_probe(ds: &ActivationDataset, layer: usize, axis: Axis, lambda: f64) -> Result<LinearProbe> {
    let (idx, targets) = ds.eligible(axis);
    let x = Features::from_dataset(ds, layer, &idx)?;
    let fit = train_probe(&x, &targets, lambda)?;
    Ok(LinearProbe::from_fit(axis, layer, &fit, dataset_fingerprint(ds)?))
}
