use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::Serialize;

use super::model::{Hooks, ToyTransformer};
use crate::error::{domain, Result};
use crate::util::{derive_seed, fmt_f, norm, substream};

/// Additive intervention `h <- h + alpha * direction` at one layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteeringSpec {
    pub layer_index: usize,
    pub direction: Vec<f64>,
    pub alpha: f64,
}

impl SteeringSpec {
    /// Normalizes `direction` to unit length.
    pub fn new(layer_index: usize, direction: &[f64], alpha: f64) -> Result<Self> {
        let n = norm(direction);
        if !(n > 0.0 && n.is_finite()) {
            return Err(domain("steering direction must be finite and non-zero"));
        }
        if !alpha.is_finite() {
            return Err(domain("steering coefficient must be finite"));
        }
        Ok(Self { layer_index, direction: direction.iter().map(|v| v / n).collect(), alpha })
    }

    pub(crate) fn check(&self, model: &ToyTransformer) -> Result<()> {
        if self.layer_index >= model.layer_count() {
            return Err(domain(format!(
                "steering layer {} out of range for {} layers",
                self.layer_index,
                model.layer_count()
            )));
        }
        if self.direction.len() != model.hidden_dim() {
            return Err(domain(format!(
                "steering direction has length {}, model hidden dim is {}",
                self.direction.len(),
                model.hidden_dim()
            )));
        }
        if (norm(&self.direction) - 1.0).abs() > 1e-6 {
            return Err(domain("steering direction is not unit norm"));
        }
        Ok(())
    }
}

/// Final logits with every spec applied from the last prompt token onward.
pub fn apply_steering(model: &ToyTransformer, tokens: &[usize], spec: &SteeringSpec) -> Result<Vec<f64>> {
    Ok(steer_with_hooks(model, tokens, std::slice::from_ref(spec))?.logits)
}

pub fn steer_with_hooks(model: &ToyTransformer, tokens: &[usize], specs: &[SteeringSpec]) -> Result<Hooks> {
    model.run(tokens, specs, tokens.len().saturating_sub(1))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Samples `max_new_tokens` continuation tokens at temperature 1, steering
/// every position from the last prompt token onward.
pub fn generate(
    model: &ToyTransformer,
    prompt: &[usize],
    specs: &[SteeringSpec],
    max_new_tokens: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut r = substream(seed, 0);
    let mut toks = prompt.to_vec();
    let start = prompt.len().saturating_sub(1);
    for _ in 0..max_new_tokens {
        let probs = softmax(&model.run(&toks, specs, start)?.logits);
        let dist = WeightedIndex::new(&probs).map_err(|e| domain(format!("sampling failed: {e}")))?;
        toks.push(dist.sample(&mut r));
    }
    Ok(toks[prompt.len()..].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub layer_index: usize,
    pub alphas: Vec<f64>,
    pub outcome_tokens: (usize, usize),
    pub repetitions: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub outcome_1_fraction: f64,
    pub outcome_2_fraction: f64,
    pub other_fraction: f64,
    /// Exact next-token probabilities of the two outcomes.
    pub outcome_1_probability: f64,
    pub outcome_2_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCurve {
    pub layer_index: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,outcome_1_fraction,outcome_2_fraction,other_fraction,repetitions,seed\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f(p.alpha, 6),
                fmt_f(p.outcome_1_fraction, 6),
                fmt_f(p.outcome_2_fraction, 6),
                fmt_f(p.other_fraction, 6),
                self.repetitions,
                self.seed
            ));
        }
        out
    }
}

/// Per-alpha choice fractions over `repetitions` sampled continuations.
/// Each alpha draws from its own stream, so the curve does not depend on the
/// order or number of other alphas.
pub fn alpha_sweep(model: &ToyTransformer, prompt: &[usize], direction: &[f64], cfg: &SweepConfig) -> Result<SweepCurve> {
    if cfg.alphas.len() < 2 {
        return Err(domain("an alpha sweep needs at least two coefficients"));
    }
    if cfg.repetitions == 0 {
        return Err(domain("repetitions must be at least 1"));
    }
    let (t1, t2) = cfg.outcome_tokens;
    for t in [t1, t2] {
        if t >= model.vocab_size() {
            return Err(domain(format!("outcome token {t} out of range for vocabulary of {}", model.vocab_size())));
        }
    }
    model.check_tokens(prompt)?;
    let base = derive_seed(cfg.seed, "alpha-sweep");
    let mut points = Vec::with_capacity(cfg.alphas.len());
    for (i, &alpha) in cfg.alphas.iter().enumerate() {
        let spec = SteeringSpec::new(cfg.layer_index, direction, alpha)?;
        let probs = softmax(&apply_steering(model, prompt, &spec)?);
        let dist = WeightedIndex::new(&probs).map_err(|e| domain(format!("sampling failed: {e}")))?;
        let mut r = substream(base, i as u64);
        let (mut c1, mut c2) = (0usize, 0usize);
        for _ in 0..cfg.repetitions {
            match dist.sample(&mut r) {
                t if t == t1 => c1 += 1,
                t if t == t2 => c2 += 1,
                _ => {}
            }
        }
        let n = cfg.repetitions as f64;
        points.push(SweepPoint {
            alpha,
            outcome_1_fraction: c1 as f64 / n,
            outcome_2_fraction: c2 as f64 / n,
            other_fraction: (cfg.repetitions - c1 - c2) as f64 / n,
            outcome_1_probability: probs[t1],
            outcome_2_probability: probs[t2],
        });
    }
    Ok(SweepCurve { layer_index: cfg.layer_index, repetitions: cfg.repetitions, seed: cfg.seed, points })
}

/// Unit direction `unembed(t1) - unembed(t2)`.
pub fn unembed_difference(model: &ToyTransformer, t1: usize, t2: usize) -> Result<Vec<f64>> {
    let a = model.unembed_row(t1)?;
    let b = model.unembed_row(t2)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = norm(&d);
    if n == 0.0 {
        return Err(domain("outcome tokens have identical unembedding rows"));
    }
    Ok(d.into_iter().map(|v| v / n).collect())
}

/// Unit vector orthogonal to every row in `against`, obtained by
/// Gram-Schmidt from a seeded Gaussian draw.
pub fn orthogonal_direction(against: &[&[f64]], dim: usize, seed: u64) -> Result<Vec<f64>> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    if against.len() >= dim {
        return Err(domain("no orthogonal direction exists"));
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for row in against {
        if row.len() != dim {
            return Err(domain("row length does not match dimension"));
        }
        let mut v = row.to_vec();
        project_out(&mut v, &basis);
        let n = norm(&v);
        if n > 1e-12 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut r = crate::util::rng(seed);
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        project_out(&mut v, &basis);
        project_out(&mut v, &basis);
        let n = norm(&v);
        if n > 1e-6 {
            return Ok(v.into_iter().map(|x| x / n).collect());
        }
    }
}

/// Token ids ordered by decreasing logit, ties by id.
pub fn top_tokens(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|a, b| logits[*b].total_cmp(&logits[*a]).then(a.cmp(b)));
    idx.truncate(k);
    idx
}

/// Direction for the orthogonality null at the final layer: orthogonal to
/// both outcome unembedding rows, to the unsteered final residual, and to the
/// rows of the most likely tokens up to 99% of next-token mass.
pub fn null_direction(model: &ToyTransformer, prompt: &[usize], outcomes: (usize, usize), seed: u64) -> Result<Vec<f64>> {
    let hooks = model.forward_with_hooks(prompt)?;
    let probs = softmax(&hooks.logits);
    let last = hooks.residuals.last().expect("at least one layer");
    let mut against: Vec<&[f64]> = vec![model.unembed_row(outcomes.0)?, model.unembed_row(outcomes.1)?, last];
    let cap = model.hidden_dim() * 3 / 4;
    let mut mass = 0.0;
    for t in top_tokens(&hooks.logits, model.vocab_size()) {
        if mass >= 0.99 || against.len() >= cap {
            break;
        }
        against.push(model.unembed_row(t)?);
        mass += probs[t];
    }
    orthogonal_direction(&against, model.hidden_dim(), seed)
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        for (x, y) in v.iter_mut().zip(b) {
            *x -= c * y;
        }
    }
}
