mod manifest;
mod output;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use demoscope::activation_store::Axis;
use demoscope::downstream_eval::Condition;
use demoscope::Result;

use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "demoscope", version, about = "Probe, steer and evaluate demographic representations")]
struct Cli {
    /// JSON run manifest; flags override its fields.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (default: out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled prompt corpus as JSON lines.
    GenPrompts(GenPromptsArgs),
    /// Check an .actv file against the container and record invariants.
    Validate(DataArgs),
    /// Sweep layers per attribute, then fit the final probes.
    TrainProbes(TrainArgs),
    /// Cross-validated AUC per layer for one attribute.
    LayerSweep(SweepArgs),
    /// Probe F1 per conversation turn.
    EvalTurns(EvalTurnsArgs),
    /// Mean probe logit per implicit-cue item.
    ScaleItems(ScaleArgs),
    /// Pairwise ordering agreement of item scales with a human survey.
    AgreeSurvey(AgreeArgs),
    /// Correlate item scales with labor, census or corpus statistics.
    CorrStats(CorrArgs),
    /// Steering sweep on the seeded toy transformer.
    SteerSweep(SteerArgs),
    /// Extract keyword snippets from a text corpus and aggregate annotations.
    CorpusScan(CorpusArgs),
    /// Career and sport stereotyping evaluation against an endpoint or cassette.
    DownstreamEval(EvalArgs),
    /// Planted-direction synthetic activations, items and survey.
    SynthOracle(OracleArgs),
    /// Collect existing outputs into a Markdown report.
    Report(ReportArgs),
    /// Execute the manifest's stage list in order.
    Run,
}

fn set<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
    if src.is_some() {
        dst.clone_from(src);
    }
}

fn parse_layers(s: &str) -> std::result::Result<Vec<usize>, String> {
    let bad = |_| format!("invalid layer list {s:?}; use e.g. 0-3 or 1,2");
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
                if a > b {
                    return Err(format!("invalid layer range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(bad)?),
        }
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err("empty layer list".into());
    }
    Ok(out)
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two token ids like 97,98, got {s:?}"))?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Activation dataset (.actv).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenPromptsArgs {
    /// explicit, negative, items, familial, adversarial, multiturn or multilingual.
    #[arg(long)]
    kind: Option<String>,
    /// Prompt count (explicit, negative).
    #[arg(long)]
    n: Option<usize>,
    /// Prompts per item (items).
    #[arg(long)]
    per_item: Option<usize>,
    /// Share of prompts translated by the multilingual mix.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    items: Option<PathBuf>,
    #[arg(long)]
    questions: Option<PathBuf>,
    #[arg(long)]
    translations: Option<PathBuf>,
    /// Prompt corpus to mix (multilingual only).
    #[arg(long)]
    prompts: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProbeGridArgs {
    /// Layers to sweep, e.g. 0-3 or 1,2.
    #[arg(long, value_parser = parse_layers)]
    layers: Option<::std::vec::Vec<usize>>,
    /// Comma-separated L2 strengths.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Cross-validation folds.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated attributes (gender, race, class).
    #[arg(long, value_delimiter = ',')]
    axes: Option<Vec<Axis>>,
    /// Planted directions JSON to report probe cosines against.
    #[arg(long)]
    directions: Option<PathBuf>,
    #[command(flatten)]
    grid: ProbeGridArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    axis: Option<Axis>,
    #[command(flatten)]
    grid: ProbeGridArgs,
}

#[derive(Debug, Args)]
struct EvalTurnsArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory of probe_<axis>.json files.
    #[arg(long)]
    probes: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScaleArgs {
    /// Item-cue activation dataset (.actv).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    probes: Option<PathBuf>,
    /// Item bank CSV giving item categories.
    #[arg(long)]
    items: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AgreeArgs {
    #[arg(long)]
    scales: Option<PathBuf>,
    #[arg(long)]
    survey: Option<PathBuf>,
    /// Welch-test significance level for survey pairs.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct CorrArgs {
    #[arg(long)]
    scales: Option<PathBuf>,
    #[arg(long)]
    bls: Option<PathBuf>,
    #[arg(long)]
    census: Option<PathBuf>,
    /// Corpus female fractions CSV from corpus-scan.
    #[arg(long)]
    fractions: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SteerArgs {
    /// Seed of the toy model weights (default: --seed).
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    prompt: Option<String>,
    /// Layer to steer (default: last).
    #[arg(long)]
    layer: Option<usize>,
    /// Comma-separated steering coefficients.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alphas: Option<Vec<f64>>,
    #[arg(long)]
    reps: Option<usize>,
    /// Outcome token ids, e.g. 97,98 (default: the two most likely).
    #[arg(long, value_parser = parse_pair)]
    outcomes: Option<(usize, usize)>,
    /// unembed, null, or a probe JSON path.
    #[arg(long)]
    direction: Option<String>,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Plain or gzip text corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Keyword CSV (item,form); default: the bundled item bank.
    #[arg(long)]
    keywords: Option<PathBuf>,
    /// Context characters on each side of a match.
    #[arg(long)]
    window: Option<usize>,
    /// Snippets sampled per item for annotation.
    #[arg(long)]
    per_item: Option<usize>,
    /// Annotation CSV to aggregate into female fractions.
    #[arg(long)]
    annotations: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Occupation pairs CSV (male_job,female_job).
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Comma-separated conditions.
    #[arg(long, value_delimiter = ',')]
    conditions: Option<Vec<Condition>>,
    /// Sport cues CSV (value,gender) for the sport-memory conditions.
    #[arg(long)]
    cues: Option<PathBuf>,
    /// First-name cues CSV (value,gender) for name memory and sports.
    #[arg(long)]
    names: Option<PathBuf>,
    /// Item scales used to pick sport cues when --cues is absent.
    #[arg(long)]
    scales: Option<PathBuf>,
    #[arg(long)]
    reps: Option<u32>,
    /// Replay responses from a recorded cassette.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Chat-completions URL for live runs.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    token_env: Option<String>,
    /// Record live exchanges to cassette.jsonl in the output directory.
    #[arg(long)]
    record: bool,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Also run the open-ended sport recommendation task.
    #[arg(long)]
    sports: bool,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Class mean offset along the planted direction.
    #[arg(long)]
    mu: Option<f64>,
    /// Isotropic noise scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Records per class.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layer_count: Option<usize>,
    /// Layers carrying the planted signal, e.g. 2 or 1-2.
    #[arg(long, value_parser = parse_layers)]
    signal_layers: Option<::std::vec::Vec<usize>>,
    #[arg(long)]
    axis: Option<Axis>,
    /// Effect planted on the other two axes (default: mu).
    #[arg(long)]
    other_effect: Option<f64>,
    /// Prompts per planted item.
    #[arg(long)]
    items_per: Option<usize>,
    /// Respondents per synthetic survey item.
    #[arg(long)]
    survey_n: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory holding stage outputs (default: --out).
    #[arg(long)]
    from: Option<PathBuf>,
}

impl ProbeGridArgs {
    fn apply(&self, m: &mut RunManifest) {
        set(&mut m.probe.layers, &self.layers);
        set(&mut m.probe.lambda_grid, &self.lambdas);
        set(&mut m.probe.k, &self.k);
    }
}

/// Folds subcommand flags into the manifest and names the stage to run.
fn apply(command: &Command, m: &mut RunManifest) -> Option<&'static str> {
    let i = &mut m.inputs;
    Some(match command {
        Command::GenPrompts(a) => {
            set(&mut m.prompts.kind, &a.kind);
            set(&mut m.prompts.n, &a.n);
            set(&mut m.prompts.per_item, &a.per_item);
            set(&mut m.prompts.fraction, &a.fraction);
            set(&mut i.templates, &a.templates);
            set(&mut i.item_bank, &a.items);
            set(&mut i.questions, &a.questions);
            set(&mut i.translations, &a.translations);
            set(&mut i.prompts, &a.prompts);
            "gen-prompts"
        }
        Command::Validate(a) => {
            set(&mut i.data, &a.data);
            "validate"
        }
        Command::TrainProbes(a) => {
            set(&mut i.data, &a.data);
            set(&mut i.directions, &a.directions);
            set(&mut m.probe.axes, &a.axes);
            a.grid.apply(m);
            "train-probes"
        }
        Command::LayerSweep(a) => {
            set(&mut i.data, &a.data);
            if let Some(axis) = a.axis {
                m.probe.axes = Some(vec![axis]);
            }
            a.grid.apply(m);
            "layer-sweep"
        }
        Command::EvalTurns(a) => {
            set(&mut i.data, &a.data);
            set(&mut i.probes, &a.probes);
            "eval-turns"
        }
        Command::ScaleItems(a) => {
            set(&mut i.items_data, &a.data);
            set(&mut i.probes, &a.probes);
            set(&mut i.item_bank, &a.items);
            "scale-items"
        }
        Command::AgreeSurvey(a) => {
            set(&mut i.scales, &a.scales);
            set(&mut i.survey, &a.survey);
            set(&mut m.agreement.alpha, &a.alpha);
            "agree-survey"
        }
        Command::CorrStats(a) => {
            set(&mut i.scales, &a.scales);
            set(&mut i.bls, &a.bls);
            set(&mut i.census, &a.census);
            set(&mut i.fractions, &a.fractions);
            "corr-stats"
        }
        Command::SteerSweep(a) => {
            let s = &mut m.steering;
            set(&mut s.model_seed, &a.model_seed);
            set(&mut s.prompt, &a.prompt);
            set(&mut s.layer, &a.layer);
            set(&mut s.alphas, &a.alphas);
            set(&mut s.repetitions, &a.reps);
            set(&mut s.outcomes, &a.outcomes);
            set(&mut s.direction, &a.direction);
            "steer-sweep"
        }
        Command::CorpusScan(a) => {
            set(&mut i.corpus, &a.corpus);
            set(&mut i.keywords, &a.keywords);
            set(&mut i.annotations, &a.annotations);
            set(&mut m.corpus.window, &a.window);
            set(&mut m.corpus.per_item, &a.per_item);
            "corpus-scan"
        }
        Command::DownstreamEval(a) => {
            set(&mut i.pairs, &a.pairs);
            set(&mut i.cues, &a.cues);
            set(&mut i.names, &a.names);
            set(&mut i.scales, &a.scales);
            set(&mut i.cassette, &a.cassette);
            let e = &mut m.eval;
            set(&mut e.conditions, &a.conditions);
            set(&mut e.repetitions, &a.reps);
            set(&mut e.endpoint, &a.endpoint);
            set(&mut e.token_env, &a.token_env);
            set(&mut e.model, &a.model);
            set(&mut e.temperature, &a.temperature);
            set(&mut e.concurrency, &a.concurrency);
            if a.record {
                e.record = Some(true);
            }
            if a.sports {
                e.sports = Some(true);
            }
            "downstream-eval"
        }
        Command::SynthOracle(a) => {
            let o = &mut m.oracle;
            set(&mut o.mu, &a.mu);
            set(&mut o.sigma, &a.sigma);
            set(&mut o.n_per_class, &a.n);
            set(&mut o.dim, &a.dim);
            set(&mut o.layer_count, &a.layer_count);
            set(&mut o.signal_layers, &a.signal_layers);
            set(&mut o.axis, &a.axis);
            set(&mut o.other_effect, &a.other_effect);
            set(&mut o.items_per, &a.items_per);
            set(&mut o.survey_n, &a.survey_n);
            "synth-oracle"
        }
        Command::Report(a) => {
            set(&mut i.report_from, &a.from);
            "report"
        }
        Command::Run => return None,
    })
}

fn execute(cli: Cli) -> Result<()> {
    let mut m = match &cli.manifest {
        Some(p) => RunManifest::load(p)?,
        None => RunManifest::default(),
    };
    set(&mut m.seed, &cli.seed);
    set(&mut m.jobs, &cli.jobs);
    set(&mut m.out, &cli.out);
    let stage = apply(&cli.command, &mut m);
    m.check()?;
    if let Some(j) = m.jobs {
        if j == 0 {
            return Err(demoscope::Error::Domain("--jobs must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    match stage {
        Some(s) => stages::run_stage(s, &m),
        None => {
            if cli.manifest.is_none() {
                return Err(demoscope::Error::Domain("run needs --manifest".into()));
            }
            if m.stages.is_empty() {
                return Err(demoscope::Error::Domain("manifest lists no stages".into()));
            }
            for s in &m.stages {
                eprintln!("stage {s}");
                stages::run_stage(s, &m)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn layer_lists() {
        assert_eq!(parse_layers("0-3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_layers("2, 1,2").unwrap(), vec![1, 2]);
        assert!(parse_layers("3-1").is_err());
        assert!(parse_layers("x").is_err());
        assert_eq!(parse_pair("97, 98").unwrap(), (97, 98));
    }

    #[test]
    fn flags_override_manifest() {
        let cli = Cli::try_parse_from(["demoscope", "synth-oracle", "--seed", "7", "--mu", "5", "--sigma", "1"]).unwrap();
        let mut m = RunManifest::default();
        m.oracle.mu = Some(2.0);
        assert_eq!(apply(&cli.command, &mut m), Some("synth-oracle"));
        assert_eq!(m.oracle.mu, Some(5.0));
        assert_eq!(cli.seed, Some(7));
        let cli = Cli::try_parse_from(["demoscope", "steer-sweep", "--alphas", "-8,-4,0,4"]).unwrap();
        apply(&cli.command, &mut m);
        assert_eq!(m.steering.alphas, Some(vec![-8.0, -4.0, 0.0, 4.0]));
        let cli = Cli::try_parse_from(["demoscope", "synth-oracle", "--signal-layers", "1-2"]).unwrap();
        apply(&cli.command, &mut m);
        assert_eq!(m.oracle.signal_layers, Some(vec![1, 2]));
        let cli = Cli::try_parse_from(["demoscope", "layer-sweep", "--layers", "0,3"]).unwrap();
        apply(&cli.command, &mut m);
        assert_eq!(m.probe.layers, Some(vec![0, 3]));
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let e = Cli::try_parse_from(["demoscope", "train-probes", "--bogus"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
