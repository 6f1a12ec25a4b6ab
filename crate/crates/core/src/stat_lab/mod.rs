//! Statistics used across the pipeline: rank and linear correlation,
//! isotonic regression, contingency tests, bootstrap intervals, rater
//! agreement and survey pair comparisons.

mod bootstrap;
mod contingency;
mod correlation;
mod isotonic;
mod survey;

pub(crate) use survey::agreement_counts;

pub use bootstrap::{bootstrap_ci, bootstrap_distribution, mean, percentile_indices, BootstrapCi};
pub use contingency::{chi_square, cohen_kappa, ChiSquareResult};
pub use correlation::{midranks, pearson, spearman, CorrelationMethod, CorrelationResult, EXACT_SPEARMAN_MAX_N};
pub use isotonic::{isotonic_fit, isotonic_fit_weighted, isotonic_fit_xy};
pub use survey::{
    pairwise_agreement, read_bls_csv, read_census_csv, read_survey_csv, welch_t, welch_t_significant, Agreement,
    AxisSummary, BlsRow, CensusCategory, CensusRow, NameKind, SurveyItem, WelchResult,
};
