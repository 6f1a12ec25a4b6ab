use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::activation_store::{ActivationDataset, ActivationRecord, AttributeLabel, Axis, CueKind};
use crate::error::{domain, Result};
use crate::util::{derive_seed, norm, rng};

/// Synthetic activations with a known linear attribute direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedSpec {
    pub n_per_class: usize,
    pub dim: usize,
    pub layer_count: usize,
    pub axis: Axis,
    /// Planted direction; a seeded random unit vector when absent.
    pub direction: Option<Vec<f64>>,
    pub effect: f64,
    pub noise: f64,
    pub signal_layers: Vec<usize>,
    /// Correlation between the planted axis labels and each other axis.
    pub axis_correlation: f64,
    /// Effect size planted for the other two axes along their own directions.
    pub other_axes_effect: f64,
    /// Norm of a shared offset added to every vector in signal layers.
    pub base_norm: f64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            n_per_class: 500,
            dim: 64,
            layer_count: 4,
            axis: Axis::Gender,
            direction: None,
            effect: 5.0,
            noise: 1.0,
            signal_layers: vec![2],
            axis_correlation: 0.0,
            other_axes_effect: 0.0,
            base_norm: 0.0,
        }
    }
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.dim == 0 || self.layer_count == 0 {
            return Err(domain("planted spec sizes must be positive"));
        }
        if !(self.effect >= 0.0 && self.effect.is_finite()) {
            return Err(domain("effect size must be non-negative"));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(domain("noise scale must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.axis_correlation) {
            return Err(domain("axis correlation must lie in [-1, 1]"));
        }
        if !(self.other_axes_effect >= 0.0 && self.base_norm >= 0.0) {
            return Err(domain("other-axis effect and base norm must be non-negative"));
        }
        if let Some(&l) = self.signal_layers.iter().find(|&&l| l >= self.layer_count) {
            return Err(domain(format!("signal layer {l} out of range for {} layers", self.layer_count)));
        }
        if let Some(v) = &self.direction {
            if v.len() != self.dim {
                return Err(domain(format!("planted direction has length {}, expected {}", v.len(), self.dim)));
            }
            if (norm(v) - 1.0).abs() > 1e-6 {
                return Err(domain("planted direction is not unit norm"));
            }
        }
        Ok(())
    }

    /// AUC of the Bayes-optimal linear rule for two Gaussian classes at
    /// `+-effect * v` with isotropic noise.
    pub fn bayes_auc(&self) -> f64 {
        bayes_auc(self.effect / self.noise)
    }
}

pub fn bayes_auc(effect_over_noise: f64) -> f64 {
    Normal::standard().cdf(std::f64::consts::SQRT_2 * effect_over_noise)
}

/// A planted dataset together with the directions used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedOracle {
    pub dataset: ActivationDataset,
    pub directions: BTreeMap<Axis, Vec<f64>>,
    pub base: Vec<f64>,
}

pub fn random_unit(dim: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn directions_for(spec: &PlantedSpec, seed: u64) -> BTreeMap<Axis, Vec<f64>> {
    Axis::ALL
        .iter()
        .map(|&a| {
            let v = match (&spec.direction, a == spec.axis) {
                (Some(v), true) => v.clone(),
                _ => random_unit(spec.dim, derive_seed(seed, &format!("direction-{a}"))),
            };
            (a, v)
        })
        .collect()
}

/// Per class `s`: `base + (2s - 1) * effect * v + noise * N(0, I)` in the
/// signal layers, pure noise elsewhere. Records alternate classes.
pub fn planted_synthetic(spec: &PlantedSpec, seed: u64) -> Result<PlantedOracle> {
    spec.validate()?;
    let directions = directions_for(spec, seed);
    let base: Vec<f64> = random_unit(spec.dim, derive_seed(seed, "base")).into_iter().map(|x| x * spec.base_norm).collect();
    let mut r = rng(derive_seed(seed, "planted-records"));
    let keep = (1.0 + spec.axis_correlation) / 2.0;
    let mut ds = ActivationDataset::new("planted-synthetic", spec.layer_count, spec.dim);
    for i in 0..2 * spec.n_per_class {
        let s = i % 2 == 1;
        let mut labels = AttributeLabel::unknown().with_target(spec.axis, s);
        let mut signs = vec![(spec.axis, spec.effect * if s { 1.0 } else { -1.0 })];
        for &a in Axis::ALL.iter().filter(|&&a| a != spec.axis) {
            let same = r.random::<f64>() < keep;
            let t = if same { s } else { !s };
            labels = labels.with_target(a, t);
            signs.push((a, spec.other_axes_effect * if t { 1.0 } else { -1.0 }));
        }
        let vectors = (0..spec.layer_count)
            .map(|l| {
                let signal = spec.signal_layers.contains(&l);
                (0..spec.dim)
                    .map(|j| {
                        let mut x = spec.noise * r.sample::<f64, _>(StandardNormal);
                        if signal {
                            x += base[j] + signs.iter().map(|(a, m)| m * directions[a][j]).sum::<f64>();
                        }
                        x as f32
                    })
                    .collect()
            })
            .collect();
        ds.records.push(ActivationRecord {
            prompt_id: format!("planted-{i:06}"),
            turn_index: 1,
            language_code: "en".into(),
            cue_kind: CueKind::Explicit,
            item_id: None,
            labels,
            vectors,
        });
    }
    ds.provenance = Some(format!("planted_synthetic seed={seed}"));
    Ok(PlantedOracle { dataset: ds, directions, base })
}

/// One implicit-cue item of a planted item dataset: its vectors sit at
/// `offsets[axis] * v_axis` in the signal layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedItem {
    pub item_id: String,
    pub cue_kind: CueKind,
    pub offsets: BTreeMap<Axis, f64>,
}

/// Item-cue records (`prompts_per_item` each, unknown labels) sharing the
/// directions, base and noise of `oracle`.
pub fn planted_items(
    spec: &PlantedSpec,
    oracle: &PlantedOracle,
    items: &[PlantedItem],
    prompts_per_item: usize,
    seed: u64,
) -> Result<ActivationDataset> {
    spec.validate()?;
    if prompts_per_item == 0 {
        return Err(domain("prompts per item must be at least 1"));
    }
    let mut r = rng(derive_seed(seed, "planted-items"));
    let mut ds = ActivationDataset::new("planted-synthetic", spec.layer_count, spec.dim);
    for item in items {
        if !item.cue_kind.is_item() {
            return Err(domain(format!("item {} has non-item cue kind {}", item.item_id, item.cue_kind.as_str())));
        }
        for p in 0..prompts_per_item {
            let vectors = (0..spec.layer_count)
                .map(|l| {
                    let signal = spec.signal_layers.contains(&l);
                    (0..spec.dim)
                        .map(|j| {
                            let mut x = spec.noise * r.sample::<f64, _>(StandardNormal);
                            if signal {
                                x += oracle.base[j]
                                    + item.offsets.iter().map(|(a, m)| m * oracle.directions[a][j]).sum::<f64>();
                            }
                            x as f32
                        })
                        .collect()
                })
                .collect();
            ds.records.push(ActivationRecord {
                prompt_id: format!("{}-{p:04}", item.item_id),
                turn_index: 1,
                language_code: "en".into(),
                cue_kind: item.cue_kind,
                item_id: Some(item.item_id.clone()),
                labels: AttributeLabel::unknown(),
                vectors,
            });
        }
    }
    ds.provenance = Some(format!("planted_items seed={seed}"));
    Ok(ds)
}
