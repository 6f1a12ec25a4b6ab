//! Byte-level toy transformer with seeded random weights.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Result};
use crate::util::rng;

pub const MAX_SEQ_LEN: usize = 512;

/// Shape of a toy model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyDims {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub layer_count: usize,
    pub head_count: usize,
    pub mlp_ratio: usize,
    /// Standard deviation of unembedding entries, in units of `1/sqrt(d)`.
    pub unembed_scale: f64,
    /// Standard deviation of token embedding entries.
    pub embed_scale: f64,
}

impl Default for ToyDims {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            hidden_dim: 64,
            layer_count: 4,
            head_count: 4,
            mlp_ratio: 4,
            unembed_scale: 4.0,
            embed_scale: 6.0,
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    fn random(rows: usize, cols: usize, sd: f64, r: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| sd * r.sample::<f64, _>(StandardNormal)).collect();
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `x · M` for a row vector `x` of length `rows`.
    fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += xi * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Block {
    wq: Mat,
    wk: Mat,
    wv: Mat,
    wo: Mat,
    w1: Mat,
    w2: Mat,
}

/// Seeded deterministic decoder-only transformer. Immutable after
/// construction; all passes are reentrant.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer {
    pub dims: ToyDims,
    pub seed: u64,
    pub(crate) embed: Mat,
    pub(crate) pos: Mat,
    pub(crate) blocks: Vec<Block>,
    pub(crate) unembed: Mat,
}

/// Last-token readouts of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Hooks {
    /// Residual entering the first block.
    pub embedding: Vec<f64>,
    /// Post-block residual of every layer.
    pub residuals: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// RMS normalization with unit gain.
pub fn rms_norm(x: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let s = 1.0 / (ms + 1e-12).sqrt();
    x.iter().map(|v| v * s).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044715 * x * x * x)).tanh())
}

pub fn build_toy_model(seed: u64, dims: ToyDims) -> Result<ToyTransformer> {
    let ToyDims { vocab_size: v, hidden_dim: d, layer_count: l, head_count: h, mlp_ratio, .. } = dims;
    if v == 0 || d == 0 || l == 0 || h == 0 || mlp_ratio == 0 {
        return Err(domain("model dimensions must be positive"));
    }
    if d % h != 0 {
        return Err(domain(format!("head count {h} does not divide hidden dim {d}")));
    }
    if !(dims.unembed_scale > 0.0 && dims.embed_scale > 0.0) {
        return Err(domain("weight scales must be positive"));
    }
    let mut r = rng(seed);
    let sd = 1.0 / (d as f64).sqrt();
    let out_sd = sd / (2.0 * l as f64).sqrt();
    let ff = d * mlp_ratio;
    let embed = Mat::random(v, d, dims.embed_scale, &mut r);
    let pos = Mat::random(MAX_SEQ_LEN, d, 1.0, &mut r);
    let blocks = (0..l)
        .map(|_| Block {
            wq: Mat::random(d, d, sd, &mut r),
            wk: Mat::random(d, d, sd, &mut r),
            wv: Mat::random(d, d, sd, &mut r),
            wo: Mat::random(d, d, out_sd * dims.embed_scale, &mut r),
            w1: Mat::random(d, ff, sd, &mut r),
            w2: Mat::random(ff, d, out_sd * dims.embed_scale * (mlp_ratio as f64).sqrt().recip(), &mut r),
        })
        .collect();
    let unembed = Mat::random(v, d, dims.unembed_scale * sd, &mut r);
    Ok(ToyTransformer { dims, seed, embed, pos, blocks, unembed })
}

impl ToyTransformer {
    pub fn hidden_dim(&self) -> usize {
        self.dims.hidden_dim
    }

    pub fn layer_count(&self) -> usize {
        self.dims.layer_count
    }

    pub fn vocab_size(&self) -> usize {
        self.dims.vocab_size
    }

    /// Unembedding row of `token`.
    pub fn unembed_row(&self, token: usize) -> Result<&[f64]> {
        self.check_token(token)?;
        Ok(self.unembed.row(token))
    }

    fn check_token(&self, t: usize) -> Result<()> {
        if t >= self.dims.vocab_size {
            return Err(domain(format!("token {t} out of range for vocabulary of {}", self.dims.vocab_size)));
        }
        Ok(())
    }

    pub(crate) fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(domain("token sequence is empty"));
        }
        if tokens.len() > MAX_SEQ_LEN {
            return Err(domain(format!("sequence length {} exceeds {MAX_SEQ_LEN}", tokens.len())));
        }
        tokens.iter().try_for_each(|&t| self.check_token(t))
    }

    /// Byte tokens of a string.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let toks: Vec<usize> = text.bytes().map(usize::from).collect();
        self.check_tokens(&toks)?;
        Ok(toks)
    }

    /// Input residuals, one row per position.
    pub fn embed_tokens(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_tokens(tokens)?;
        Ok(tokens
            .iter()
            .enumerate()
            .map(|(p, &t)| self.embed.row(t).iter().zip(self.pos.row(p)).map(|(a, b)| a + b).collect())
            .collect())
    }

    /// Output that block `layer` adds to the residual sequence `h`.
    pub fn block_delta(&self, layer: usize, h: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let b = self
            .blocks
            .get(layer)
            .ok_or_else(|| domain(format!("layer {layer} out of range for {} layers", self.dims.layer_count)))?;
        let (d, heads) = (self.dims.hidden_dim, self.dims.head_count);
        let hd = d / heads;
        let normed: Vec<Vec<f64>> = h.iter().map(|x| rms_norm(x)).collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|x| b.wq.left_mul(x)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|x| b.wk.left_mul(x)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|x| b.wv.left_mul(x)).collect();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = Vec::with_capacity(h.len());
        for t in 0..h.len() {
            let mut mixed = vec![0.0; d];
            for head in 0..heads {
                let r = head * hd..(head + 1) * hd;
                let scores: Vec<f64> = (0..=t)
                    .map(|s| q[t][r.clone()].iter().zip(&k[s][r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = w.iter().sum();
                for (s, ws) in w.iter().enumerate() {
                    for (o, vv) in mixed[r.clone()].iter_mut().zip(&v[s][r.clone()]) {
                        *o += ws / z * vv;
                    }
                }
            }
            let attn = b.wo.left_mul(&mixed);
            let mid: Vec<f64> = h[t].iter().zip(&attn).map(|(a, b)| a + b).collect();
            let hidden: Vec<f64> = b.w1.left_mul(&rms_norm(&mid)).into_iter().map(gelu).collect();
            let mlp = b.w2.left_mul(&hidden);
            out.push(attn.iter().zip(&mlp).map(|(a, b)| a + b).collect());
        }
        Ok(out)
    }

    pub(crate) fn logits_of(&self, h: &[f64]) -> Vec<f64> {
        let n = rms_norm(h);
        (0..self.dims.vocab_size).map(|t| self.unembed.row(t).iter().zip(&n).map(|(a, b)| a * b).sum()).collect()
    }

    /// Full residual stream: entry 0 is the embedding, entry `i + 1` the
    /// post-block residual of layer `i`. Each entry has one row per position.
    pub fn residual_stream(&self, tokens: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut stream = vec![self.embed_tokens(tokens)?];
        for layer in 0..self.dims.layer_count {
            let h = stream.last().expect("stream starts non-empty");
            let delta = self.block_delta(layer, h)?;
            let next = h.iter().zip(&delta).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
            stream.push(next);
        }
        Ok(stream)
    }

    pub fn forward_with_hooks(&self, tokens: &[usize]) -> Result<Hooks> {
        self.run(tokens, &[], tokens.len().saturating_sub(1))
    }

    /// Forward pass with additive interventions applied to every position
    /// from `steer_from` onward at each spec's layer.
    pub(crate) fn run(&self, tokens: &[usize], specs: &[super::SteeringSpec], steer_from: usize) -> Result<Hooks> {
        for s in specs {
            s.check(self)?;
        }
        let mut h = self.embed_tokens(tokens)?;
        let embedding = h.last().expect("non-empty").clone();
        let mut residuals = Vec::with_capacity(self.dims.layer_count);
        for layer in 0..self.dims.layer_count {
            let delta = self.block_delta(layer, &h)?;
            for (row, dr) in h.iter_mut().zip(&delta) {
                for (x, y) in row.iter_mut().zip(dr) {
                    *x += y;
                }
            }
            for s in specs.iter().filter(|s| s.layer_index == layer && s.alpha != 0.0) {
                for row in h.iter_mut().skip(steer_from) {
                    for (x, v) in row.iter_mut().zip(&s.direction) {
                        *x += s.alpha * v;
                    }
                }
            }
            residuals.push(h.last().expect("non-empty").clone());
        }
        let logits = self.logits_of(h.last().expect("non-empty"));
        Ok(Hooks { embedding, residuals, logits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(seed: u64) -> ToyTransformer {
        build_toy_model(seed, ToyDims::default()).unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let toks = model(1).tokenize("The user is a nurse.").unwrap();
        let a = model(1).forward_with_hooks(&toks).unwrap();
        let b = model(1).forward_with_hooks(&toks).unwrap();
        let c = model(2).forward_with_hooks(&toks).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.logits, c.logits);
    }

    #[test]
    fn shapes_and_errors() {
        let m = model(3);
        let h = m.forward_with_hooks(&[65]).unwrap();
        assert_eq!(h.residuals.len(), 4);
        assert!(h.residuals.iter().all(|r| r.len() == 64));
        assert_eq!(h.logits.len(), 256);
        assert!(m.forward_with_hooks(&[]).is_err());
        assert!(m.forward_with_hooks(&[256]).is_err());
        let dims = ToyDims { head_count: 5, ..ToyDims::default() };
        assert!(build_toy_model(0, dims).is_err());
        let dims = ToyDims { layer_count: 0, ..ToyDims::default() };
        assert!(build_toy_model(0, dims).is_err());
    }

    #[test]
    fn logits_finite_at_max_length() {
        let m = build_toy_model(4, ToyDims { layer_count: 1, ..ToyDims::default() }).unwrap();
        let toks: Vec<usize> = (0..MAX_SEQ_LEN).map(|i| (i * 31) % 256).collect();
        assert!(m.forward_with_hooks(&toks).unwrap().logits.iter().all(|v| v.is_finite()));
        assert!(m.forward_with_hooks(&vec![0; MAX_SEQ_LEN + 1]).is_err());
    }

    #[test]
    fn additive_stream_identity() {
        let m = model(5);
        let mut r = rng(6);
        let toks: Vec<usize> = (0..12).map(|_| r.random_range(0..256)).collect();
        let stream = m.residual_stream(&toks).unwrap();
        let hooks = m.forward_with_hooks(&toks).unwrap();
        assert_eq!(&hooks.embedding, stream[0].last().unwrap());
        for i in 0..4 {
            let delta = m.block_delta(i, &stream[i]).unwrap();
            let last = toks.len() - 1;
            for j in 0..64 {
                let rebuilt = stream[i][last][j] + delta[last][j];
                assert!((hooks.residuals[i][j] - rebuilt).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn rms_norm_outputs_unit_rms() {
        let mut r = rng(7);
        for _ in 0..20 {
            let x: Vec<f64> = (0..64).map(|_| 10.0 * r.sample::<f64, _>(StandardNormal)).collect();
            let n = rms_norm(&x);
            let ms = n.iter().map(|v| v * v).sum::<f64>() / 64.0;
            assert!((ms.sqrt() - 1.0).abs() <= 1e-5);
        }
    }
}
