//! Deterministic smooth minimizers used by the probes.
//!
//! Both solvers start from the supplied point, use only full-batch
//! information and contain no randomness, so identical inputs give
//! bit-identical iterates.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;

/// Sufficient-decrease test with slack for rounding noise near the optimum.
fn accepts(f_new: f64, f: f64, step: f64, slope: f64) -> bool {
    f_new.is_finite() && f_new <= f + ARMIJO * step * slope + 4.0 * f64::EPSILON * f.abs()
}

/// Limited-memory BFGS with Armijo backtracking.
///
/// `eval(x, grad)` returns the objective and writes the gradient.
pub fn lbfgs<F>(mut eval: F, x0: Vec<f64>, memory: usize, opts: SolverOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = eval(&x, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(memory);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();

    while iterations < opts.max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= opts.grad_tol {
            return Minimum { x, value: f, grad_norm: gnorm, iterations, converged: true };
        }
        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alpha[i] = rho * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alpha[i] * yj;
            }
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0 / gnorm.max(1.0)
        };
        for dj in d.iter_mut() {
            *dj *= gamma;
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alpha[i] - beta) * sj;
            }
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
            s_hist.clear();
            y_hist.clear();
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for j in 0..n {
                x_new[j] = x[j] + t * d[j];
            }
            let f_new = eval(&x_new, &mut g_new);
            if accepts(f_new, f, t, slope) {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                    if s_hist.len() == memory {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                    s_hist.push(s);
                    y_hist.push(y);
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
        }
    }
    let grad_norm = dot(&g, &g).sqrt();
    Minimum { x, value: f, grad_norm, iterations, converged: grad_norm <= opts.grad_tol }
}

/// Damped Newton method for a twice-differentiable convex objective.
///
/// `eval(x, grad, hess)` returns the objective, writes the gradient and,
/// when `hess` is `Some`, the Hessian.
pub fn newton<F>(mut eval: F, x0: Vec<f64>, opts: SolverOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64], Option<&mut DMatrix<f64>>) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut f = eval(&x, &mut g, Some(&mut h));
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= opts.grad_tol {
            return Minimum { x, value: f, grad_norm: gnorm, iterations, converged: true };
        }
        let step = solve_spd(&h, &g);
        let slope: f64 = step.iter().zip(&g).map(|(s, gi)| s * gi).sum();
        let (dir, slope) = if slope < 0.0 {
            (step, slope)
        } else {
            (g.iter().map(|v| -v).collect(), -gnorm * gnorm)
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for j in 0..n {
                x_new[j] = x[j] + t * dir[j];
            }
            let f_new = eval(&x_new, &mut g_new, None);
            if accepts(f_new, f, t, slope) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        std::mem::swap(&mut x, &mut x_new);
        f = eval(&x, &mut g, Some(&mut h));
    }
    let _ = &mut g_new;
    let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    Minimum { x, value: f, grad_norm, iterations, converged: grad_norm <= opts.grad_tol }
}

/// Solves `h · s = -g`, adding a growing ridge when `h` is not numerically
/// positive definite.
fn solve_spd(h: &DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let rhs = DVector::from_iterator(g.len(), g.iter().map(|v| -v));
    let scale = (h.trace() / h.nrows().max(1) as f64).abs().max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..40 {
        let mut m = h.clone();
        if ridge > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += ridge;
            }
        }
        if let Some(ch) = m.cholesky() {
            return ch.solve(&rhs).iter().copied().collect();
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 10.0 };
    }
    rhs.iter().copied().collect()
}
