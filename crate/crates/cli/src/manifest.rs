//! Run manifest: one JSON document holding every stage setting.

use std::fs;
use std::path::{Path, PathBuf};

use demoscope::activation_store::Axis;
use demoscope::downstream_eval::Condition;
use demoscope::{Error, Result};
use serde::{Deserialize, Serialize};

/// Stage names accepted in `stages`.
pub const STAGES: [&str; 13] = [
    "gen-prompts",
    "validate",
    "train-probes",
    "layer-sweep",
    "eval-turns",
    "scale-items",
    "agree-survey",
    "corr-stats",
    "steer-sweep",
    "corpus-scan",
    "downstream-eval",
    "synth-oracle",
    "report",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub stages: Vec<String>,
    pub inputs: Inputs,
    pub prompts: PromptSection,
    pub oracle: OracleSection,
    pub probe: ProbeSection,
    pub agreement: AgreementSection,
    pub steering: SteerSection,
    pub corpus: CorpusSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub data: Option<PathBuf>,
    pub items_data: Option<PathBuf>,
    pub probes: Option<PathBuf>,
    pub directions: Option<PathBuf>,
    pub item_bank: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub translations: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub scales: Option<PathBuf>,
    pub survey: Option<PathBuf>,
    pub bls: Option<PathBuf>,
    pub census: Option<PathBuf>,
    pub fractions: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub cues: Option<PathBuf>,
    pub names: Option<PathBuf>,
    pub cassette: Option<PathBuf>,
    pub report_from: Option<PathBuf>,
}

impl Inputs {
    fn paths_mut(&mut self) -> [(&'static str, &mut Option<PathBuf>); 22] {
        [
            ("data", &mut self.data),
            ("items_data", &mut self.items_data),
            ("probes", &mut self.probes),
            ("directions", &mut self.directions),
            ("item_bank", &mut self.item_bank),
            ("templates", &mut self.templates),
            ("questions", &mut self.questions),
            ("translations", &mut self.translations),
            ("prompts", &mut self.prompts),
            ("scales", &mut self.scales),
            ("survey", &mut self.survey),
            ("bls", &mut self.bls),
            ("census", &mut self.census),
            ("fractions", &mut self.fractions),
            ("corpus", &mut self.corpus),
            ("keywords", &mut self.keywords),
            ("annotations", &mut self.annotations),
            ("pairs", &mut self.pairs),
            ("cues", &mut self.cues),
            ("names", &mut self.names),
            ("cassette", &mut self.cassette),
            ("report_from", &mut self.report_from),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub kind: Option<String>,
    pub n: Option<usize>,
    pub per_item: Option<usize>,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub n_per_class: Option<usize>,
    pub dim: Option<usize>,
    pub layer_count: Option<usize>,
    pub signal_layers: Option<Vec<usize>>,
    pub axis: Option<Axis>,
    pub other_effect: Option<f64>,
    pub items_per: Option<usize>,
    pub survey_n: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub axes: Option<Vec<Axis>>,
    pub layers: Option<Vec<usize>>,
    pub lambda_grid: Option<Vec<f64>>,
    pub k: Option<usize>,
    pub holdout_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgreementSection {
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerSection {
    pub model_seed: Option<u64>,
    pub prompt: Option<String>,
    pub layer: Option<usize>,
    pub alphas: Option<Vec<f64>>,
    pub repetitions: Option<usize>,
    pub outcomes: Option<(usize, usize)>,
    /// `unembed`, `null`, or a probe JSON path.
    pub direction: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub window: Option<usize>,
    pub per_item: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub conditions: Option<Vec<Condition>>,
    pub repetitions: Option<u32>,
    pub endpoint: Option<String>,
    pub token_env: Option<String>,
    pub record: Option<bool>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub concurrency: Option<usize>,
    pub bootstrap_resamples: Option<usize>,
    pub sports: Option<bool>,
    pub sport_k: Option<usize>,
    pub timeout_secs: Option<u64>,
}

pub const PROBE_KEYWORDS: [&str; 2] = ["unembed", "null"];

impl RunManifest {
    /// Reads a manifest; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Domain(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Domain(format!("manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        for (_, p) in m.inputs.paths_mut() {
            rebase(p);
        }
        rebase(&mut m.out);
        if let Some(d) = m.steering.direction.as_mut() {
            if !PROBE_KEYWORDS.contains(&d.as_str()) && Path::new(d.as_str()).is_relative() {
                *d = base.join(&*d).to_string_lossy().into_owned();
            }
        }
        if m.seed.is_none() {
            return Err(Error::Domain(format!("manifest {} has no seed", path.display())));
        }
        Ok(m)
    }

    /// Every declared input must exist and every stage name must be known.
    pub fn check(&mut self) -> Result<()> {
        for s in &self.stages {
            if !STAGES.contains(&s.as_str()) {
                return Err(Error::Domain(format!("unknown stage {s:?}; expected one of {}", STAGES.join(", "))));
            }
        }
        for (name, p) in self.inputs.paths_mut() {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Domain(format!("missing input file: {} (inputs.{name})", p.display())));
                }
            }
        }
        Ok(())
    }
}
