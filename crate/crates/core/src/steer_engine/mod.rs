//! Causal side: a seeded toy transformer with residual-stream hooks,
//! additive steering, alpha sweeps and the planted-direction oracle.

mod model;
mod planted;
mod steering;

pub use model::{build_toy_model, rms_norm, Hooks, ToyDims, ToyTransformer, MAX_SEQ_LEN};
pub use planted::{bayes_auc, planted_items, planted_synthetic, random_unit, PlantedItem, PlantedOracle, PlantedSpec};
pub use steering::{
    alpha_sweep, apply_steering, generate, null_direction, orthogonal_direction, top_tokens, softmax, steer_with_hooks, unembed_difference,
    SteeringSpec, SweepConfig, SweepCurve, SweepPoint,
};
