pub mod activation_store;
pub mod corpus_scan;
pub mod downstream_eval;
pub mod error;
pub mod item_scaler;
pub mod probe_lab;
pub mod prompt_forge;
pub mod stat_lab;
pub mod steer_engine;
pub mod util;

pub use error::{Error, FormatError, Result};
