//! Activation dataset model.
//!
//! An [`ActivationDataset`] holds, for every prompt (or conversation turn),
//! the last-token residual-stream vector of each captured layer together with
//! the prompt's ground-truth attribute labels. The on-disk form is the `.actv`
//! container implemented in [`container`].
//!
//! Binary targets follow a fixed convention: female, white and rich map to 1;
//! male, black and poor map to 0; unknown labels are excluded from fitting.

mod container;
mod split;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub use container::{decode, encode, read_dataset, write_dataset, ACTV_MAGIC, ACTV_VERSION};
pub use split::{split_stratified, stratified_folds};

/// Tolerance on the RMS of stored vectors when `normalized` is set.
pub const NORMALIZED_RMS_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Race {
    Black,
    White,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Poor,
    Rich,
    Unknown,
}

/// One of the three binary demographic attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Gender,
    Race,
    Class,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Gender, Axis::Race, Axis::Class];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Gender => "gender",
            Axis::Race => "race",
            Axis::Class => "class",
        }
    }

    /// Names of the (negative, positive) classes on this axis.
    pub fn class_names(self) -> (&'static str, &'static str) {
        match self {
            Axis::Gender => ("male", "female"),
            Axis::Race => ("black", "white"),
            Axis::Class => ("poor", "rich"),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Axis::Gender => 0,
            Axis::Race => 1,
            Axis::Class => 2,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gender" => Ok(Axis::Gender),
            "race" => Ok(Axis::Race),
            "class" => Ok(Axis::Class),
            other => Err(domain(format!("unknown attribute axis {other:?}"))),
        }
    }
}

/// Tri-state labels on the three axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeLabel {
    pub gender: Gender,
    pub race: Race,
    pub class: Class,
}

impl Default for AttributeLabel {
    fn default() -> Self {
        Self::unknown()
    }
}

impl AttributeLabel {
    pub fn unknown() -> Self {
        Self { gender: Gender::Unknown, race: Race::Unknown, class: Class::Unknown }
    }

    /// Binary fitting target on `axis`: `Some(1)` for female/white/rich,
    /// `Some(0)` for male/black/poor, `None` when unknown.
    pub fn target(&self, axis: Axis) -> Option<u8> {
        match axis {
            Axis::Gender => match self.gender {
                Gender::Female => Some(1),
                Gender::Male => Some(0),
                Gender::Unknown => None,
            },
            Axis::Race => match self.race {
                Race::White => Some(1),
                Race::Black => Some(0),
                Race::Unknown => None,
            },
            Axis::Class => match self.class {
                Class::Rich => Some(1),
                Class::Poor => Some(0),
                Class::Unknown => None,
            },
        }
    }

    /// Sets `axis` from a binary target (1 = female/white/rich).
    pub fn with_target(mut self, axis: Axis, positive: bool) -> Self {
        match axis {
            Axis::Gender => self.gender = if positive { Gender::Female } else { Gender::Male },
            Axis::Race => self.race = if positive { Race::White } else { Race::Black },
            Axis::Class => self.class = if positive { Class::Rich } else { Class::Poor },
        }
        self
    }

    pub fn clear(mut self, axis: Axis) -> Self {
        match axis {
            Axis::Gender => self.gender = Gender::Unknown,
            Axis::Race => self.race = Race::Unknown,
            Axis::Class => self.class = Class::Unknown,
        }
        self
    }

    pub fn is_unknown(&self) -> bool {
        Axis::ALL.iter().all(|a| self.target(*a).is_none())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueKind {
    Explicit,
    Familial,
    Adversarial,
    Negative,
    Name,
    Occupation,
    CulturalItem,
}

impl CueKind {
    /// Item cues carry an `item_id`; all other kinds must not.
    pub fn is_item(self) -> bool {
        matches!(self, CueKind::Name | CueKind::Occupation | CueKind::CulturalItem)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CueKind::Explicit => "explicit",
            CueKind::Familial => "familial",
            CueKind::Adversarial => "adversarial",
            CueKind::Negative => "negative",
            CueKind::Name => "name",
            CueKind::Occupation => "occupation",
            CueKind::CulturalItem => "cultural_item",
        }
    }
}

impl FromStr for CueKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| domain(format!("unknown cue kind {s:?}")))
    }
}

/// One prompt turn: last-token residual vectors for every layer, plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub prompt_id: String,
    pub turn_index: u32,
    pub language_code: String,
    pub cue_kind: CueKind,
    pub item_id: Option<String>,
    pub labels: AttributeLabel,
    /// `vectors[layer]` has `hidden_dim` entries.
    pub vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    pub model_id: String,
    pub layer_count: usize,
    pub hidden_dim: usize,
    pub normalized: bool,
    /// Free-text note on how the vectors were captured (e.g. which residual
    /// addition they follow).
    pub provenance: Option<String>,
    pub records: Vec<ActivationRecord>,
}

impl ActivationDataset {
    pub fn new(model_id: impl Into<String>, layer_count: usize, hidden_dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            layer_count,
            hidden_dim,
            normalized: false,
            provenance: None,
            records: Vec::new(),
        }
    }

    /// Vector of `record` at `layer` as f64, RMS-normalized unless the
    /// dataset is already normalized.
    pub fn feature(&self, record: usize, layer: usize) -> Result<Vec<f64>> {
        let v: Vec<f64> = self.records[record].vectors[layer].iter().map(|&x| x as f64).collect();
        if self.normalized {
            Ok(v)
        } else {
            rms_normalize(&v)
        }
    }

    /// Returns a copy with every vector RMS-normalized; a dataset that is
    /// already normalized is returned unchanged.
    pub fn to_normalized(&self) -> Result<ActivationDataset> {
        if self.normalized {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        for rec in &mut out.records {
            for v in &mut rec.vectors {
                let vf: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                let n = rms_normalize(&vf).map_err(|e| {
                    domain(format!("record {}: {e}", rec.prompt_id))
                })?;
                *v = n.into_iter().map(|x| x as f32).collect();
            }
        }
        out.normalized = true;
        Ok(out)
    }

    /// Record indices whose label on `axis` is known, with their targets.
    pub fn eligible(&self, axis: Axis) -> (Vec<usize>, Vec<u8>) {
        self.records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.labels.target(axis).map(|t| (i, t)))
            .unzip()
    }
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Divides `v` by the root of its mean squared entry.
pub fn rms_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(domain("cannot RMS-normalize an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(domain("cannot RMS-normalize a vector with non-finite entries"));
    }
    let r = rms(v);
    if r == 0.0 {
        return Err(domain("cannot RMS-normalize an all-zero vector"));
    }
    Ok(v.iter().map(|x| x / r).collect())
}

/// An invariant violation found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// `None` for dataset-level violations.
    pub prompt_id: Option<String>,
    pub record_index: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.prompt_id, self.record_index) {
            (Some(id), Some(i)) => write!(f, "record #{i} ({id}) {}: {}", self.field, self.message),
            _ => write!(f, "dataset {}: {}", self.field, self.message),
        }
    }
}

fn is_iso639_1(code: &str) -> bool {
    code.len() == 2 && code.bytes().all(|b| b.is_ascii_lowercase())
}

/// Checks every dataset and record invariant. An empty list means the dataset
/// is well formed.
pub fn validate_dataset(ds: &ActivationDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let ds_violation = |field: &str, message: String| Violation {
        prompt_id: None,
        record_index: None,
        field: field.to_string(),
        message,
    };
    if ds.layer_count == 0 {
        out.push(ds_violation("layer_count", "must be at least 1".into()));
    }
    if ds.hidden_dim == 0 {
        out.push(ds_violation("hidden_dim", "must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    for (i, r) in ds.records.iter().enumerate() {
        let mut push = |field: &str, message: String| {
            out.push(Violation {
                prompt_id: Some(r.prompt_id.clone()),
                record_index: Some(i),
                field: field.to_string(),
                message,
            })
        };
        if r.prompt_id.is_empty() {
            push("prompt_id", "empty".into());
        }
        if !seen.insert((r.prompt_id.as_str(), r.turn_index)) {
            push("prompt_id", format!("duplicate (prompt_id, turn_index = {})", r.turn_index));
        }
        if r.turn_index < 1 {
            push("turn_index", "must be >= 1".into());
        }
        if !is_iso639_1(&r.language_code) {
            push("language_code", format!("{:?} is not an ISO-639-1 code", r.language_code));
        }
        match (r.cue_kind.is_item(), &r.item_id) {
            (true, None) => push("item_id", format!("required for cue_kind {}", r.cue_kind.as_str())),
            (false, Some(_)) => {
                push("item_id", format!("must be absent for cue_kind {}", r.cue_kind.as_str()))
            }
            _ => {}
        }
        if r.vectors.len() != ds.layer_count {
            push(
                "vectors",
                format!("{} layers, dataset declares {}", r.vectors.len(), ds.layer_count),
            );
        }
        for (l, v) in r.vectors.iter().enumerate() {
            if v.len() != ds.hidden_dim {
                push(
                    "vectors",
                    format!("layer {l} has length {}, hidden_dim is {}", v.len(), ds.hidden_dim),
                );
                continue;
            }
            if v.iter().any(|x| !x.is_finite()) {
                push("vectors", format!("layer {l} has non-finite entries"));
                continue;
            }
            if ds.normalized && !v.is_empty() {
                let vf: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                let r = rms(&vf);
                if (r - 1.0).abs() > NORMALIZED_RMS_TOL {
                    push("vectors", format!("layer {l} has RMS {r:.6} but dataset is normalized"));
                }
            }
        }
    }
    out
}
