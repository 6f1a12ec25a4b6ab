//! Stage implementations shared by the subcommands and `run`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use demoscope::activation_store::{encode, read_dataset, validate_dataset, ActivationDataset, Axis};
use demoscope::corpus_scan::{
    aggregate_fractions, annotator_agreement, correlate_corpus_vs_probe, open_corpus, read_annotations_csv,
    read_fractions_csv, read_keywords_csv, sample_snippets, scan_snippets, write_snippets_jsonl, AnnotationRecord,
    Keyword, Snippet,
};
use demoscope::downstream_eval::{
    career_eval, career_outcomes_csv, career_report_csv, default_sport_lexicon, read_cues_csv, read_pairs_csv,
    select_sports, sport_eval, sport_report_csv, Cassette, ChatClient, Condition, Cue, EvalConfig, HttpClient,
    RecordingClient, ReplayClient,
};
use demoscope::item_scaler::{
    correlate_occupations, name_probe_auc, read_scales_csv, scale_items, scales_to_csv, scatter_to_csv,
    survey_agreement_table, ItemScale,
};
use demoscope::probe_lab::{eval_by_turn, fit_probe, layer_sweep_layers, CvConfig, LinearProbe, ProbeReport, DEFAULT_LAMBDA_GRID};
use demoscope::prompt_forge::{
    builtin_items, builtin_questions, gen_explicit_corpus, gen_item_prompts, gen_multilingual_mix, gen_negative_corpus,
    gen_validation_prompts, read_item_bank, read_prompts_jsonl, read_question_bank, write_prompts_jsonl, ItemSpec,
    TemplateBank, TranslationBank,
};
use demoscope::stat_lab::{read_bls_csv, read_census_csv, read_survey_csv, CorrelationResult};
use demoscope::steer_engine::{
    alpha_sweep, apply_steering, build_toy_model, null_direction, planted_items, planted_synthetic, top_tokens,
    unembed_difference, PlantedItem, PlantedSpec, SteeringSpec, SweepConfig, ToyDims,
};
use demoscope::util::{cosine, csv_reader, derive_seed, fmt_f, rng};
use demoscope::{Error, Result};
use rand::Rng;

use crate::manifest::RunManifest;
use crate::output::{provenance_line, Outputs};

pub const DEFAULT_STEER_PROMPT: &str = "Hello, could you suggest which sport I could do?";
pub const DEFAULT_ALPHAS: [f64; 7] = [-8.0, -4.0, -2.0, 0.0, 2.0, 4.0, 8.0];

fn fail(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

fn open(p: &Path) -> Result<BufReader<File>> {
    File::open(p).map(BufReader::new).map_err(|e| fail(format!("cannot open {}: {e}", p.display())))
}

fn in_file<T>(p: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| fail(format!("{}: {e}", p.display())))
}

struct Ctx<'a> {
    m: &'a RunManifest,
    seed: u64,
    out: PathBuf,
}

impl Ctx<'_> {
    /// The declared path, or the conventional output of an earlier stage.
    fn input(&self, given: &Option<PathBuf>, default: &str, flag: &str) -> Result<PathBuf> {
        if let Some(p) = given {
            return Ok(p.clone());
        }
        let p = self.out.join(default);
        if p.exists() {
            Ok(p)
        } else {
            Err(fail(format!("missing input file: {} (pass {flag})", p.display())))
        }
    }

    fn required(&self, given: &Option<PathBuf>, stage: &str, flag: &str) -> Result<PathBuf> {
        given.clone().ok_or_else(|| fail(format!("{stage} needs {flag}")))
    }

    fn dataset(&self, given: &Option<PathBuf>, default: &str) -> Result<(PathBuf, ActivationDataset)> {
        let p = self.input(given, default, "--data")?;
        let ds = in_file(&p, read_dataset(&p))?;
        Ok((p, ds))
    }

    fn probes(&self) -> Result<Vec<LinearProbe>> {
        let dir = self.input(&self.m.inputs.probes, "probes", "--probes")?;
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| fail(format!("cannot list {}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.starts_with("probe_") && name.ends_with(".json")
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(fail(format!("no probe_<axis>.json files in {}", dir.display())));
        }
        paths.iter().map(|p| in_file(p, LinearProbe::load(p))).collect()
    }

    fn item_bank(&self) -> Result<Vec<ItemSpec>> {
        match &self.m.inputs.item_bank {
            Some(p) => in_file(p, read_item_bank(open(p)?)),
            None => Ok(builtin_items()),
        }
    }

    fn scales(&self) -> Result<Vec<ItemScale>> {
        let p = self.input(&self.m.inputs.scales, "item_scales.csv", "--scales")?;
        in_file(&p, read_scales_csv(open(&p)?))
    }
}

pub fn run_stage(stage: &str, m: &RunManifest) -> Result<()> {
    let ctx = Ctx { m, seed: m.seed.unwrap_or(0), out: m.out.clone().unwrap_or_else(|| PathBuf::from("out")) };
    let mut out = Outputs::new(&ctx.out, provenance_line(stage, m, ctx.seed)?);
    match stage {
        "gen-prompts" => gen_prompts(&ctx, &mut out)?,
        "validate" => validate(&ctx)?,
        "train-probes" => train_probes(&ctx, &mut out)?,
        "layer-sweep" => layer_sweep(&ctx, &mut out)?,
        "eval-turns" => eval_turns(&ctx, &mut out)?,
        "scale-items" => scale(&ctx, &mut out)?,
        "agree-survey" => agree_survey(&ctx, &mut out)?,
        "corr-stats" => corr_stats(&ctx, &mut out)?,
        "steer-sweep" => steer_sweep(&ctx, &mut out)?,
        "corpus-scan" => corpus_scan(&ctx, &mut out)?,
        "downstream-eval" => downstream_eval(&ctx, &mut out)?,
        "synth-oracle" => synth_oracle(&ctx, &mut out)?,
        "report" => report(&ctx, &mut out)?,
        other => return Err(fail(format!("unknown stage {other:?}"))),
    }
    for p in out.commit()? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn gen_prompts(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let (i, p) = (&ctx.m.inputs, &ctx.m.prompts);
    let bank = match &i.templates {
        Some(t) => in_file(t, TemplateBank::from_jsonl(open(t)?))?,
        None => TemplateBank::builtin(),
    };
    let kind = p.kind.as_deref().unwrap_or("explicit");
    let prompts = match kind {
        "explicit" => gen_explicit_corpus(&bank, p.n.unwrap_or(2500), ctx.seed)?,
        "negative" => {
            let q = match &i.questions {
                Some(path) => in_file(path, read_question_bank(open(path)?))?,
                None => builtin_questions(),
            };
            gen_negative_corpus(&q, p.n.unwrap_or(q.len()), ctx.seed)?
        }
        "items" => gen_item_prompts(&bank, &ctx.item_bank()?, p.per_item.unwrap_or(20), ctx.seed)?,
        "familial" | "adversarial" | "multiturn" => gen_validation_prompts(&bank, kind.parse()?, ctx.seed)?,
        "multilingual" => {
            let src = ctx.input(&i.prompts, "prompts_explicit.jsonl", "--prompts")?;
            let base = in_file(&src, read_prompts_jsonl(open(&src)?))?;
            let tp = ctx.required(&i.translations, "the multilingual mix", "--translations")?;
            let tb = in_file(&tp, TranslationBank::from_csv(open(&tp)?))?;
            gen_multilingual_mix(&base, &bank, &tb, p.fraction.unwrap_or(0.25), ctx.seed)?
        }
        other => {
            return Err(fail(format!(
                "unknown prompt kind {other:?}; expected explicit, negative, items, familial, adversarial, multiturn or multilingual"
            )))
        }
    };
    println!("{} {kind} prompts", prompts.len());
    out.text(&format!("prompts_{kind}.jsonl"), write_prompts_jsonl(&prompts)?);
    Ok(())
}

fn validate(ctx: &Ctx) -> Result<()> {
    let (p, ds) = ctx.dataset(&ctx.m.inputs.data, "oracle.actv")?;
    let violations = validate_dataset(&ds);
    for v in &violations {
        eprintln!("{v}");
    }
    if !violations.is_empty() {
        return Err(fail(format!("{}: {} invariant violations", p.display(), violations.len())));
    }
    println!(
        "{}: valid, {} records, {} layers, hidden dim {}",
        p.display(),
        ds.records.len(),
        ds.layer_count,
        ds.hidden_dim
    );
    Ok(())
}

fn cv_config(m: &RunManifest, seed: u64) -> CvConfig {
    CvConfig {
        lambda_grid: m.probe.lambda_grid.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec()),
        k: m.probe.k.unwrap_or(5),
        seed,
        holdout_fraction: m.probe.holdout_fraction.unwrap_or(0.1),
    }
}

fn sweep_layers(m: &RunManifest, ds: &ActivationDataset) -> Result<Vec<usize>> {
    let layers = m.probe.layers.clone().unwrap_or_else(|| (0..ds.layer_count).collect());
    if let Some(&l) = layers.iter().find(|&&l| l >= ds.layer_count) {
        return Err(fail(format!("layer {l} out of range for {} layers", ds.layer_count)));
    }
    Ok(layers)
}

/// Axes with at least `k` labeled records in each class.
fn trainable_axes(ds: &ActivationDataset, k: usize) -> Vec<Axis> {
    Axis::ALL
        .into_iter()
        .filter(|&a| {
            let (_, t) = ds.eligible(a);
            let pos = t.iter().filter(|&&x| x == 1).count();
            pos >= k && t.len() - pos >= k
        })
        .collect()
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn train_probes(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let m = ctx.m;
    let (path, ds) = ctx.dataset(&m.inputs.data, "oracle.actv")?;
    let cfg = cv_config(m, ctx.seed);
    let layers = sweep_layers(m, &ds)?;
    let axes = m.probe.axes.clone().unwrap_or_else(|| trainable_axes(&ds, cfg.k));
    if axes.is_empty() {
        return Err(fail(format!("no attribute in {} has {} labeled records per class", path.display(), cfg.k)));
    }
    let mut report = ProbeReport::default();
    for &axis in &axes {
        report = report.merge(layer_sweep_layers(&ds, axis, &layers, &cfg)?);
    }
    let directions: Option<BTreeMap<Axis, Vec<f64>>> = match (&m.inputs.directions, &m.inputs.data) {
        (Some(p), _) => Some(in_file(p, serde_json::from_reader(open(p)?).map_err(Error::from))?),
        (None, None) if ctx.out.join("oracle_directions.json").exists() => {
            let p = ctx.out.join("oracle_directions.json");
            Some(in_file(&p, serde_json::from_reader(open(&p)?).map_err(Error::from))?)
        }
        _ => None,
    };
    let mut md = format!(
        "# Probe report\n\nData: `{}` (model {}, {} records, {} layers, hidden dim {})\n\n",
        file_name(&path),
        ds.model_id,
        ds.records.len(),
        ds.layer_count,
        ds.hidden_dim
    );
    md.push_str("| attribute | layer | lambda | CV AUC | AUC sd |");
    md.push_str(if directions.is_some() { " cosine to planted |\n|---|---|---|---|---|---|\n" } else { "\n|---|---|---|---|---|\n" });
    for &axis in &axes {
        let best = report.best(axis).ok_or_else(|| fail(format!("no sweep result for {axis}")))?;
        let probe = fit_probe(&ds, best.layer, axis, best.chosen_lambda)?;
        let c = best.chosen();
        md.push_str(&format!(
            "| {axis} | {} | {} | {} | {} |",
            best.layer,
            best.chosen_lambda,
            fmt_f(c.mean_auc, 6),
            fmt_f(c.std_auc, 6)
        ));
        let cos = directions.as_ref().and_then(|d| d.get(&axis)).map(|v| cosine(&probe.weights, v));
        if directions.is_some() {
            md.push_str(&format!(" {} |", cos.map_or("NA".into(), |c| fmt_f(c, 6))));
        }
        md.push('\n');
        println!(
            "{axis}: layer {}, lambda {}, CV AUC {}{}",
            best.layer,
            best.chosen_lambda,
            fmt_f(c.mean_auc, 6),
            cos.map_or(String::new(), |c| format!(", cosine to planted {}", fmt_f(c, 6)))
        );
        let mut json = serde_json::to_vec_pretty(&probe)?;
        json.push(b'\n');
        out.raw(&format!("probes/probe_{axis}.json"), json);
    }
    md.push_str("\n## AUC by layer at the chosen lambda\n\n| layer |");
    for a in &axes {
        md.push_str(&format!(" {a} |"));
    }
    md.push_str("\n|---|");
    md.push_str(&"---|".repeat(axes.len()));
    md.push('\n');
    for &l in &layers {
        md.push_str(&format!("| {l} |"));
        for &a in &axes {
            let v = report.result(a, l).map_or("NA".into(), |r| fmt_f(r.chosen().mean_auc, 6));
            md.push_str(&format!(" {v} |"));
        }
        md.push('\n');
    }
    out.text("probe_summary.csv", report.summary_csv()?);
    out.text("probe_folds.csv", report.folds_csv()?);
    out.markdown("probe_report.md", md);
    Ok(())
}

fn layer_sweep(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let m = ctx.m;
    let (_, ds) = ctx.dataset(&m.inputs.data, "oracle.actv")?;
    let axis = m.probe.axes.as_ref().and_then(|a| a.first().copied()).unwrap_or(Axis::Gender);
    let report = layer_sweep_layers(&ds, axis, &sweep_layers(m, &ds)?, &cv_config(m, ctx.seed))?;
    if let Some(best) = report.best(axis) {
        println!("{axis}: optimal layer {}, CV AUC {}", best.layer, fmt_f(best.chosen().mean_auc, 6));
    }
    out.text("layer_sweep.csv", report.summary_csv()?);
    out.text("layer_sweep_folds.csv", report.folds_csv()?);
    Ok(())
}

fn eval_turns(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let (_, ds) = ctx.dataset(&ctx.m.inputs.data, "oracle.actv")?;
    let table = eval_by_turn(&ds, &ctx.probes()?)?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    out.text("turn_f1.csv", table.to_csv()?);
    Ok(())
}

fn scale(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let (_, ds) = ctx.dataset(&ctx.m.inputs.items_data, "oracle_items.actv")?;
    let categories: BTreeMap<String, String> =
        ctx.item_bank()?.into_iter().map(|it| (it.item_id, it.category)).collect();
    let scales = scale_items(&ds, &ctx.probes()?, &categories)?;
    println!("{} items scaled", scales.len());
    out.text("item_scales.csv", scales_to_csv(&scales)?);
    Ok(())
}

fn agree_survey(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let scales = ctx.scales()?;
    let sp = ctx.input(&ctx.m.inputs.survey, "oracle_survey.csv", "--survey")?;
    let survey = in_file(&sp, read_survey_csv(open(&sp)?))?;
    let table = survey_agreement_table(&scales, &survey, ctx.m.agreement.alpha.unwrap_or(0.05))?;
    for axis in Axis::ALL {
        if let Some(a) = table.pooled(&[axis]) {
            println!("{axis}: {}% agreement over {} pairs", fmt_f(a.percent, 1), a.pairs_used);
        }
    }
    out.text("agreement.csv", table.to_csv()?);
    out.text("agreement_table.csv", table.to_wide_csv()?);
    Ok(())
}

fn corr_row(analysis: &str, r: &CorrelationResult) -> String {
    let method = match r.method {
        demoscope::stat_lab::CorrelationMethod::Spearman => "spearman",
        demoscope::stat_lab::CorrelationMethod::Pearson => "pearson",
    };
    println!("{analysis}: {method} {} (p = {}, n = {})", fmt_f(r.coefficient, 4), fmt_f(r.p_value, 6), r.n);
    format!("{analysis},{method},{},{},{}\n", fmt_f(r.coefficient, 6), fmt_f(r.p_value, 6), r.n)
}

fn corr_stats(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let i = &ctx.m.inputs;
    let fractions = i.fractions.clone().or_else(|| Some(ctx.out.join("item_fractions.csv")).filter(|p| p.exists()));
    if i.bls.is_none() && i.census.is_none() && fractions.is_none() {
        return Err(fail("corr-stats needs at least one of --bls, --census or --fractions"));
    }
    let scales = ctx.scales()?;
    let mut rows = String::from("analysis,method,coefficient,p_value,n\n");
    if let Some(p) = &i.bls {
        let c = correlate_occupations(&scales, &in_file(p, read_bls_csv(open(p)?))?)?;
        rows.push_str(&corr_row("occupation_gender_vs_fraction_women", &c.gender));
        rows.push_str(&corr_row("occupation_class_vs_median_wage", &c.class));
        out.text("occupation_scatter.csv", scatter_to_csv(&c.scatter)?);
    }
    if let Some(p) = &fractions {
        let c = correlate_corpus_vs_probe(&in_file(p, read_fractions_csv(open(p)?))?, &scales)?;
        rows.push_str(&corr_row("corpus_fraction_female_vs_gender", &c.result));
        out.text("corpus_scatter.csv", c.to_csv()?);
    }
    if i.bls.is_some() || fractions.is_some() {
        out.text("correlations.csv", rows);
    }
    if let Some(p) = &i.census {
        let aucs = name_probe_auc(&scales, &in_file(p, read_census_csv(open(p)?))?)?;
        let mut csv = String::from("axis,auc,n\n");
        for (axis, a) in &aucs {
            println!("names {axis}: AUC {} (n = {})", fmt_f(a.auc, 4), a.n);
            csv.push_str(&format!("{axis},{},{}\n", fmt_f(a.auc, 6), a.n));
        }
        out.text("name_auc.csv", csv);
    }
    Ok(())
}

fn steer_sweep(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let s = &ctx.m.steering;
    let model = build_toy_model(s.model_seed.unwrap_or(ctx.seed), ToyDims::default())?;
    let prompt = model.tokenize(s.prompt.as_deref().unwrap_or(DEFAULT_STEER_PROMPT))?;
    let outcomes = match s.outcomes {
        Some(o) => o,
        None => {
            let t = top_tokens(&model.forward_with_hooks(&prompt)?.logits, 2);
            (t[0], t[1])
        }
    };
    let layer = s.layer.unwrap_or(model.layer_count() - 1);
    let direction = match s.direction.as_deref().unwrap_or("unembed") {
        "unembed" => unembed_difference(&model, outcomes.0, outcomes.1)?,
        "null" => null_direction(&model, &prompt, outcomes, derive_seed(ctx.seed, "null-direction"))?,
        path => {
            let p = Path::new(path);
            in_file(p, LinearProbe::load(p))?.direction()?
        }
    };
    let cfg = SweepConfig {
        layer_index: layer,
        alphas: s.alphas.clone().unwrap_or_else(|| DEFAULT_ALPHAS.to_vec()),
        outcome_tokens: outcomes,
        repetitions: s.repetitions.unwrap_or(200),
        seed: ctx.seed,
    };
    let curve = alpha_sweep(&model, &prompt, &direction, &cfg)?;
    let mut logits_csv = String::from("alpha,outcome_1,outcome_2,logit_difference,outcome_1_probability,outcome_2_probability\n");
    for p in &curve.points {
        let logits = apply_steering(&model, &prompt, &SteeringSpec::new(layer, &direction, p.alpha)?)?;
        logits_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_f(p.alpha, 6),
            outcomes.0,
            outcomes.1,
            fmt_f(logits[outcomes.0] - logits[outcomes.1], 9),
            fmt_f(p.outcome_1_probability, 9),
            fmt_f(p.outcome_2_probability, 9)
        ));
    }
    println!("steered layer {layer} toward token {} over {}, {} alphas", outcomes.0, outcomes.1, curve.points.len());
    out.text("steering_sweep.csv", curve.to_csv());
    out.text("steering_logits.csv", logits_csv);
    Ok(())
}

fn corpus_scan(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let (i, c) = (&ctx.m.inputs, &ctx.m.corpus);
    let corpus = ctx.required(&i.corpus, "corpus-scan", "--corpus")?;
    let keywords: Vec<Keyword> = match &i.keywords {
        Some(p) => in_file(p, read_keywords_csv(open(p)?))?,
        None => ctx.item_bank()?.into_iter().map(|it| Keyword { item: it.item_id, form: it.text }).collect(),
    };
    let scanner = scan_snippets(in_file(&corpus, open_corpus(&corpus))?, &keywords, c.window.unwrap_or(200))?;
    let snippets: Vec<Snippet> = in_file(&corpus, scanner.collect())?;
    let per_item = c.per_item.unwrap_or(50);
    let sample = sample_snippets(&snippets, per_item, ctx.seed)?;
    for (item, found) in &sample.shortfall {
        eprintln!("warning: item {item} has only {found} snippets, {per_item} requested");
    }
    println!("{} snippets, {} sampled", snippets.len(), sample.snippets.len());
    out.text("snippets.jsonl", write_snippets_jsonl(&snippets)?);
    out.text("snippet_sample.jsonl", write_snippets_jsonl(&sample.snippets)?);
    if let Some(p) = &i.annotations {
        let ann = in_file(p, read_annotations_csv(open(p)?))?;
        let report = aggregate_fractions(&snippets, &ann)?;
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        out.text("item_fractions.csv", report.to_csv()?);
        let mut by_annotator: BTreeMap<&str, Vec<AnnotationRecord>> = BTreeMap::new();
        for a in &ann {
            by_annotator.entry(a.annotator_id.as_str()).or_default().push(a.clone());
        }
        let ids: Vec<&str> = by_annotator.keys().copied().collect();
        if let [a, b, ..] = ids[..] {
            let k = annotator_agreement(&by_annotator[a], &by_annotator[b])?;
            println!("kappa({a}, {b}) = {} over {} snippets", fmt_f(k.kappa, 4), k.shared);
            out.text("annotator_kappa.csv", format!("annotator_a,annotator_b,kappa,shared\n{a},{b},{},{}\n", fmt_f(k.kappa, 6), k.shared));
        }
    }
    Ok(())
}

enum Backend {
    Replay(ReplayClient),
    Live(HttpClient),
    Record(RecordingClient<HttpClient>),
}

impl Backend {
    fn client(&self) -> &dyn ChatClient {
        match self {
            Backend::Replay(c) => c,
            Backend::Live(c) => c,
            Backend::Record(c) => c,
        }
    }
}

fn replay_hint(e: Error) -> Error {
    match e {
        Error::CassetteMiss(key) => fail(format!(
            "cassette has no recorded response for key {key}; replay needs the seed, pairs, conditions and repetitions used when recording"
        )),
        e => e,
    }
}

fn read_cues(p: &Path) -> Result<Vec<Cue>> {
    in_file(p, read_cues_csv(open(p)?))
}

fn downstream_eval(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let (i, e) = (&ctx.m.inputs, &ctx.m.eval);
    let pp = ctx.required(&i.pairs, "downstream-eval", "--pairs")?;
    let pairs = in_file(&pp, read_pairs_csv(open(&pp)?))?;
    let mut cfg = EvalConfig { seed: ctx.seed, ..EvalConfig::default() };
    let backend = match (&i.cassette, &e.endpoint) {
        (Some(p), _) => {
            let cassette = in_file(p, Cassette::load(p))?;
            cfg.model = cassette.header.model.clone();
            cfg.temperature = cassette.header.temperature;
            Backend::Replay(ReplayClient::new(cassette))
        }
        (None, Some(url)) => {
            let token_env = e.token_env.as_deref().unwrap_or("DEMOSCOPE_API_TOKEN");
            let http = HttpClient::new(url.clone(), token_env, Duration::from_secs(e.timeout_secs.unwrap_or(120)));
            if e.record == Some(true) {
                Backend::Record(RecordingClient::new(http, cfg.model.clone(), cfg.temperature))
            } else {
                Backend::Live(http)
            }
        }
        (None, None) => return Err(fail("downstream-eval needs --cassette or --endpoint")),
    };
    if let Some(model) = &e.model {
        cfg.model = model.clone();
    }
    if let Some(t) = e.temperature {
        cfg.temperature = t;
    }
    if let Some(c) = e.concurrency {
        cfg.concurrency = c;
    }
    if let Some(b) = e.bootstrap_resamples {
        cfg.bootstrap_resamples = b;
    }
    let reps = e.repetitions.unwrap_or(5);
    let conditions = e.conditions.clone().unwrap_or_else(|| vec![Condition::ExplicitMale, Condition::ExplicitFemale]);
    let needs_sports = conditions.iter().any(|c| matches!(c, Condition::MemoryMaleSport | Condition::MemoryFemaleSport));
    let sport_cues: Vec<Cue> = match (needs_sports, &i.cues) {
        (false, _) => Vec::new(),
        (true, Some(p)) => read_cues(p)?,
        (true, None) => {
            let (male, female) = select_sports(&ctx.scales()?, e.sport_k.unwrap_or(3))?;
            male.into_iter().chain(female).collect()
        }
    };
    let needs_names = conditions.contains(&Condition::MemoryName) || e.sports == Some(true);
    let names: Vec<Cue> = match (needs_names, &i.names) {
        (false, _) => Vec::new(),
        (true, Some(p)) => read_cues(p)?,
        (true, None) => return Err(fail("name memory and the sport task need --names")),
    };
    let mut results = Vec::new();
    for &condition in &conditions {
        let cues: Vec<Cue> = match condition {
            Condition::MemoryName => names.clone(),
            c => match c.fixed_gender() {
                Some(g) if c.memory_kind().is_some() => sport_cues.iter().filter(|q| q.gender == g).cloned().collect(),
                _ => Vec::new(),
            },
        };
        let r = career_eval(&pairs, condition, &cues, reps, backend.client(), &cfg).map_err(replay_hint)?;
        for g in &r.groups {
            println!(
                "{condition} {}: stereotypical {} [{}, {}], refusal rate {}, n = {}",
                g.inferred_gender.as_str(),
                fmt_f(g.fraction, 4),
                fmt_f(g.ci_lo, 4),
                fmt_f(g.ci_hi, 4),
                fmt_f(g.refusal_rate, 4),
                g.n
            );
        }
        results.push(r);
    }
    out.text("career_report.csv", career_report_csv(&results)?);
    out.text("career_outcomes.csv", career_outcomes_csv(&results)?);
    if e.sports == Some(true) {
        let s = sport_eval(&names, reps, backend.client(), &default_sport_lexicon(), &cfg).map_err(replay_hint)?;
        out.text("sport_report.csv", sport_report_csv(&s)?);
    }
    if let Backend::Record(rec) = backend {
        out.text("cassette.jsonl", rec.into_cassette().to_jsonl()?);
    }
    Ok(())
}

fn synth_oracle(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let o = &ctx.m.oracle;
    let mu = o.mu.unwrap_or(5.0);
    let spec = PlantedSpec {
        n_per_class: o.n_per_class.unwrap_or(500),
        dim: o.dim.unwrap_or(64),
        layer_count: o.layer_count.unwrap_or(4),
        axis: o.axis.unwrap_or(Axis::Gender),
        direction: None,
        effect: mu,
        noise: o.sigma.unwrap_or(1.0),
        signal_layers: o.signal_layers.clone().unwrap_or_else(|| vec![2]),
        axis_correlation: 0.0,
        other_axes_effect: o.other_effect.unwrap_or(mu),
        base_norm: 0.0,
    };
    let mut oracle = planted_synthetic(&spec, ctx.seed)?;
    let bank = ctx.item_bank()?;
    let mut offsets_csv = String::from("item,category,axis,offset\n");
    let mut survey_csv = String::from("item,category,axis,mean,sd,n\n");
    let survey_n = o.survey_n.unwrap_or(100);
    let mut planted = Vec::with_capacity(bank.len());
    for it in &bank {
        let mut r = rng(derive_seed(ctx.seed, &format!("item-offsets:{}", it.item_id)));
        let mut offsets = BTreeMap::new();
        for axis in Axis::ALL {
            let u: f64 = r.random_range(-1.0..=1.0);
            let jitter: f64 = r.random_range(-0.25..=0.25);
            offsets.insert(axis, mu * u);
            offsets_csv.push_str(&format!("{},{},{axis},{}\n", it.item_id, it.category, fmt_f(mu * u, 6)));
            // Likert-style 1..7 rating that rises with the planted offset.
            let mean = (4.0 + 2.5 * u + jitter).clamp(1.0, 7.0);
            survey_csv.push_str(&format!("{},{},{axis},{},1.5,{survey_n}\n", it.item_id, it.category, fmt_f(mean, 4)));
        }
        planted.push(PlantedItem { item_id: it.item_id.clone(), cue_kind: it.cue_kind, offsets });
    }
    let mut items = planted_items(&spec, &oracle, &planted, o.items_per.unwrap_or(20), derive_seed(ctx.seed, "oracle-items"))?;
    for ds in [&mut oracle.dataset, &mut items] {
        ds.provenance = Some(format!("{} | {}", ds.provenance.as_deref().unwrap_or("synthetic"), out.line()));
    }
    println!(
        "planted {} at layers {:?}: mu/sigma = {}, Bayes AUC {}",
        spec.axis,
        spec.signal_layers,
        fmt_f(spec.effect / spec.noise, 4),
        fmt_f(spec.bayes_auc(), 6)
    );
    let mut dirs = serde_json::to_vec_pretty(&oracle.directions)?;
    dirs.push(b'\n');
    out.raw("oracle.actv", encode(&oracle.dataset)?);
    out.raw("oracle_items.actv", encode(&items)?);
    out.raw("oracle_directions.json", dirs);
    out.text("oracle_items.csv", offsets_csv);
    out.text("oracle_survey.csv", survey_csv);
    Ok(())
}

/// Report sections in display order.
const SECTIONS: [(&str, &str); 13] = [
    ("Probe AUC by layer", "probe_summary.csv"),
    ("Probe F1 by turn", "turn_f1.csv"),
    ("Item scales", "item_scales.csv"),
    ("Survey agreement", "agreement_table.csv"),
    ("Correlations", "correlations.csv"),
    ("Name probe AUC", "name_auc.csv"),
    ("Corpus female fractions", "item_fractions.csv"),
    ("Annotator agreement", "annotator_kappa.csv"),
    ("Steering logit difference", "steering_logits.csv"),
    ("Steering choice fractions", "steering_sweep.csv"),
    ("Career stereotyping", "career_report.csv"),
    ("Sport recommendations", "sport_report.csv"),
    ("Layer sweep", "layer_sweep.csv"),
];

const MAX_REPORT_ROWS: usize = 200;

fn csv_to_markdown(p: &Path) -> Result<String> {
    let mut r = csv_reader(open(p)?);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut md = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    let mut extra = 0;
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        if n >= MAX_REPORT_ROWS {
            extra += 1;
            continue;
        }
        let cells: Vec<String> = rec.iter().map(|c| c.replace('|', "\\|").replace('\n', " ")).collect();
        md.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    if extra > 0 {
        md.push_str(&format!("\n{extra} more rows in `{}`.\n", file_name(p)));
    }
    Ok(md)
}

fn report(ctx: &Ctx, out: &mut Outputs) -> Result<()> {
    let from = ctx.m.inputs.report_from.clone().unwrap_or_else(|| ctx.out.clone());
    let summary = from.join(SECTIONS[0].1);
    if !summary.exists() {
        return Err(fail(format!("missing input file: {}", summary.display())));
    }
    let mut md = String::from("# demoscope report\n");
    for (title, name) in SECTIONS {
        let p = from.join(name);
        if p.exists() {
            md.push_str(&format!("\n## {title}\n\nSource: `{name}`\n\n"));
            md.push_str(&in_file(&p, csv_to_markdown(&p))?);
        }
    }
    out.markdown("report.md", md);
    Ok(())
}
