//! Linear probes: fitting, cross-validated evaluation, layer selection,
//! per-turn persistence and a nonlinear baseline.

mod cv;
mod logistic;
mod metrics;
mod mlp;
pub mod optim;

pub use cv::{
    cross_validate, cross_validate_features, eval_by_turn, layer_sweep, layer_sweep_layers, CvConfig,
    CvResult, LambdaResult, ProbeReport, TurnRow, TurnTable, DEFAULT_LAMBDA_GRID,
};
pub(crate) use cv::finish_csv;
pub use logistic::{
    dataset_fingerprint, fit_probe, train_probe, train_probe_with, Features, LinearProbe, LogisticFit,
    LogisticObjective, Solver, TrainOptions, NEWTON_MAX_DIM,
};
pub use metrics::{auc_roc, f1_score};
pub use mlp::{mlp_objective, mlp_probe_baseline, mlp_probe_baseline_with, train_mlp, MlpComparison, MlpConfig, MlpProbe};

/// Unit direction of a probe; the steering vector for its attribute.
pub fn probe_direction(probe: &LinearProbe) -> crate::Result<Vec<f64>> {
    probe.direction()
}
