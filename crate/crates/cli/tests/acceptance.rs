//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use demoscope::activation_store::{
    decode, encode, read_dataset, ActivationDataset, ActivationRecord, AttributeLabel, Axis, Class, CueKind, Gender,
    Race,
};
use demoscope::downstream_eval::{
    career_eval, career_report_csv, read_pairs_csv, Cassette, Condition, EvalConfig, OccupationPair, RecordingClient,
    ReplayClient, SyntheticChat,
};
use demoscope::probe_lab::{auc_roc, cross_validate, fit_probe, CvConfig, Features, LinearProbe, LogisticObjective};
use demoscope::prompt_forge::{
    cell_of, gen_explicit_corpus, gen_multilingual_mix, gen_validation_prompts, LabeledPrompt, TemplateBank,
    TranslationBank, ValidationKind, MIX_LANGUAGES,
};
use demoscope::stat_lab::{
    bootstrap_ci, chi_square, cohen_kappa, isotonic_fit, pairwise_agreement, spearman, AxisSummary, SurveyItem,
};
use demoscope::steer_engine::{
    alpha_sweep, apply_steering, build_toy_model, null_direction, planted_synthetic, top_tokens, unembed_difference,
    PlantedSpec, SteeringSpec, SweepConfig, ToyDims,
};
use demoscope::util::{cosine, rng};
use rand::Rng;
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::erf::erfc;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn demoscope(args: &[&str]) -> Result<String, String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_demoscope")).args(args).output())?;
    if !out.status.success() {
        return Err(format!("demoscope {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn planted_recovery() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let out = dir.path().to_str().unwrap();
    let start = Instant::now();
    demoscope(&[
        "synth-oracle", "--seed", "7", "--mu", "5", "--sigma", "1", "--n", "500", "--dim", "64", "--layer-count", "4",
        "--signal-layers", "2", "--out", out,
    ])?;
    demoscope(&["train-probes", "--seed", "7", "--out", out])?;
    let secs = start.elapsed().as_secs_f64();
    let probe = ok(LinearProbe::load(&dir.path().join("probes/probe_gender.json")))?;
    let planted: BTreeMap<Axis, Vec<f64>> =
        ok(serde_json::from_str(&ok(fs::read_to_string(dir.path().join("oracle_directions.json")))?))?;
    let summary = ok(fs::read_to_string(dir.path().join("probe_summary.csv")))?;
    let mut by_layer = BTreeMap::new();
    for line in summary.lines().skip(1).filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split(',').collect();
        if f[1] == "gender" {
            by_layer.insert(ok(f[0].parse::<usize>())?, ok(f[2].parse::<f64>())?);
        }
    }
    let (&best, &auc) = by_layer.iter().max_by(|a, b| a.1.total_cmp(b.1)).ok_or("no gender rows in probe_summary.csv")?;
    let cos = cosine(&ok(probe.direction())?, &planted[&Axis::Gender]);
    let detail = format!("selected layer {}, CV AUC {auc:.6}, cosine {cos:.4}, {secs:.1} s", probe.layer_index);
    ensure!(probe.layer_index == 2 && best == 2, "{detail}: expected layer 2");
    ensure!(auc >= 0.99, "{detail}: AUC below 0.99");
    ensure!(cos >= 0.95, "{detail}: cosine below 0.95");
    ensure!(secs < 60.0, "{detail}: slower than 60 s");
    Ok(detail)
}

/// Phi(sqrt(2) * ratio): the projected class difference is N(2 mu, 2 sigma^2).
fn gaussian_oracle_auc(ratio: f64) -> f64 {
    0.5 * erfc(-ratio)
}

/// Lambda chosen by cross-validation on 1000 per class; AUC measured on a
/// large independent draw so test-set noise does not mask the gap.
fn bayes_gap() -> Outcome {
    let mut parts = Vec::new();
    for (i, ratio) in [0.5, 1.0, 2.0, 5.0].into_iter().enumerate() {
        let seed = 100 + i as u64;
        let spec = PlantedSpec { n_per_class: 1000, effect: ratio, noise: 1.0, ..PlantedSpec::default() };
        let train = ok(planted_synthetic(&spec, seed))?;
        let cv = ok(cross_validate(&train.dataset, 2, Axis::Gender, &CvConfig { seed, ..CvConfig::default() }))?;
        let probe = ok(fit_probe(&train.dataset, 2, Axis::Gender, cv.chosen_lambda))?;
        let direction = Some(train.directions[&Axis::Gender].clone());
        let test = ok(planted_synthetic(&PlantedSpec { n_per_class: 20_000, direction, ..spec.clone() }, seed + 1000))?;
        let (idx, y) = test.dataset.eligible(Axis::Gender);
        let scores: Vec<f64> = ok(idx.iter().map(|&r| probe.score_record(&test.dataset, r)).collect())?;
        let measured = ok(auc_roc(&scores, &y))?;
        let oracle = gaussian_oracle_auc(ratio);
        ensure!((measured - oracle).abs() <= 0.02, "mu/sigma {ratio}: measured {measured:.4} vs closed form {oracle:.4}");
        parts.push(format!("{ratio}: {measured:.4}/{oracle:.4}"));
    }
    Ok(format!("probe vs closed form {}", parts.join(", ")))
}

fn brute_auc(scores: &[f64], y: &[u8]) -> f64 {
    let (mut num, mut pos, mut neg) = (0u64, 0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if y[i] == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
        if y[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if y[j] == 0 {
                num += if si > sj { 2 } else if si == sj { 1 } else { 0 };
            }
        }
    }
    num as f64 / (2 * pos * neg) as f64
}

fn auc_equivalence() -> Outcome {
    let mut r = rng(4242);
    let mut tied_cases = 0;
    for case in 0..200 {
        let n = r.random_range(2..=200);
        let levels = if case % 2 == 0 { r.random_range(1..=5) } else { 1_000_000 };
        let mut y: Vec<u8> = (0..n).map(|_| r.random_range(0..=1)).collect();
        y[0] = 0;
        y[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / 7.0).collect();
        if levels <= 5 {
            tied_cases += 1;
        }
        let fast = ok(auc_roc(&scores, &y))?;
        let brute = brute_auc(&scores, &y);
        ensure!(fast == brute, "case {case} (n = {n}): fast {fast:?} vs pairwise {brute:?}");
    }
    Ok(format!("200 cases exactly equal, {tied_cases} with heavy ties"))
}

fn gradient_check() -> Outcome {
    let mut r = rng(99);
    let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..6).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let y: Vec<u8> = rows.iter().map(|x| u8::from(x[0] + 0.5 * x[1] + r.random_range(-1.0..1.0) > 0.0)).collect();
    let obj = ok(LogisticObjective::new(&ok(Features::from_rows(&rows))?, &y, 0.1))?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let theta: Vec<f64> = (0..obj.dim()).map(|_| r.random_range(-1.5..1.5)).collect();
        let g = obj.gradient(&theta);
        let numeric: Vec<f64> = (0..theta.len())
            .map(|k| {
                let (mut a, mut b) = (theta.clone(), theta.clone());
                a[k] += h;
                b[k] -= h;
                (obj.value(&a) - obj.value(&b)) / (2.0 * h)
            })
            .collect();
        let diff = g.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst = worst.max(diff / scale.max(1e-12));
    }
    ensure!(worst <= 1e-5, "worst relative error {worst:e}");
    Ok(format!("20 points, worst relative error {worst:.2e}"))
}

fn steering_dose_response() -> Outcome {
    let model = ok(build_toy_model(11, ToyDims::default()))?;
    let prompt = ok(model.tokenize("Hello, could you suggest which sport I could do?"))?;
    let baseline = ok(model.forward_with_hooks(&prompt))?.logits;
    let top = top_tokens(&baseline, 2);
    let (t1, t2) = (top[0], top[1]);
    let layer = model.layer_count() - 1;
    let dir = ok(unembed_difference(&model, t1, t2))?;
    let alphas = [-8.0, -4.0, -2.0, 0.0, 2.0, 4.0, 8.0];
    let mut diffs = Vec::new();
    for a in alphas {
        let logits = ok(apply_steering(&model, &prompt, &ok(SteeringSpec::new(layer, &dir, a))?))?;
        if a == 0.0 {
            let exact = logits.iter().zip(&baseline).all(|(x, y)| x.to_bits() == y.to_bits());
            ensure!(exact, "alpha 0 does not reproduce baseline logits bit-exactly");
        }
        diffs.push(logits[t1] - logits[t2]);
    }
    ensure!(diffs.windows(2).all(|w| w[1] > w[0]), "logit difference not strictly increasing: {diffs:?}");
    let reps = 400;
    let null = ok(null_direction(&model, &prompt, (t1, t2), 5))?;
    let cfg = SweepConfig { layer_index: layer, alphas: alphas.to_vec(), outcome_tokens: (t1, t2), repetitions: reps, seed: 3 };
    let curve = ok(alpha_sweep(&model, &prompt, &null, &cfg))?;
    let p0 = curve.points.iter().find(|p| p.alpha == 0.0).ok_or("no alpha 0")?.outcome_1_probability;
    let binom = ok(Binomial::new(p0, reps as u64))?;
    let (lo, hi) = (binom.inverse_cdf(0.005), binom.inverse_cdf(0.995));
    for p in &curve.points {
        let c = (p.outcome_1_fraction * reps as f64).round() as u64;
        ensure!((lo..=hi).contains(&c), "null alpha {}: {c}/{reps} outside [{lo}, {hi}]", p.alpha);
    }
    Ok(format!(
        "logit difference {:.3} to {:.3}, alpha 0 bit-exact, null counts within [{lo}, {hi}] of {reps}",
        diffs[0],
        diffs[6]
    ))
}

fn sse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn best_grid_sse(y: &[f64], grid: &[f64], start: usize, prefix: &mut Vec<f64>, best: &mut f64) {
    if prefix.len() == y.len() {
        *best = best.min(sse(prefix, y));
        return;
    }
    for g in start..grid.len() {
        prefix.push(grid[g]);
        best_grid_sse(y, grid, g, prefix, best);
        prefix.pop();
    }
}

fn statistics_suite() -> Outcome {
    let rho = ok(spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]))?.coefficient;
    ensure!((rho + 0.5).abs() <= 1e-12, "spearman {rho}");
    ensure!(isotonic_fit(&[3.0, 1.0, 2.0]) == vec![2.0, 2.0, 2.0], "isotonic_fit([3,1,2]) = {:?}", isotonic_fit(&[3.0, 1.0, 2.0]));
    let grid: Vec<f64> = (0..=16).map(|i| i as f64 * 0.25).collect();
    let mut r = rng(5);
    for case in 0..60 {
        let n = r.random_range(1..=6);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(0..=8) as f64 * 0.5).collect();
        let fit = isotonic_fit(&y);
        ensure!(fit.windows(2).all(|w| w[0] <= w[1]), "case {case}: fit {fit:?} not monotone");
        let mut best = f64::INFINITY;
        best_grid_sse(&y, &grid, 0, &mut Vec::new(), &mut best);
        ensure!(sse(&fit, &y) <= best + 1e-12, "case {case}: isotonic SSE {} above grid {best}", sse(&fit, &y));
    }
    let chi = ok(chi_square(&[vec![10.0, 20.0], vec![20.0, 10.0]]))?.statistic;
    ensure!((chi - 20.0 / 3.0).abs() <= 1e-9, "chi-square {chi}");
    let kappa = ok(cohen_kappa(&[1, 1, 0, 0], &[1, 0, 1, 0]))?;
    ensure!(kappa == 0.0, "kappa {kappa}");
    let ci = ok(bootstrap_ci(&[3.5f64; 40], |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64, 500, 0.95, 1))?;
    ensure!(ci.hi - ci.lo == 0.0, "bootstrap CI width {}", ci.hi - ci.lo);
    let survey: Vec<SurveyItem> = (0..5)
        .map(|i| SurveyItem {
            item_id: format!("i{i}"),
            category: "c".into(),
            axes: BTreeMap::from([(Axis::Gender, AxisSummary { mean: 1.0 + i as f64, sd: 0.5, n: 100 })]),
        })
        .collect();
    let same: BTreeMap<String, f64> = (0..5).map(|i| (format!("i{i}"), i as f64 * 3.0)).collect();
    let reversed: BTreeMap<String, f64> = (0..5).map(|i| (format!("i{i}"), -(i as f64))).collect();
    let a = ok(pairwise_agreement(&same, &survey, Axis::Gender, 0.05))?.percent;
    let b = ok(pairwise_agreement(&reversed, &survey, Axis::Gender, 0.05))?.percent;
    ensure!(a == 100.0 && b == 0.0, "agreement endpoints {a}% / {b}%");
    Ok(format!("spearman {rho}, chi-square {chi:.12}, kappa {kappa}, 60 isotonic grid cases, agreement {a}%/{b}%"))
}

fn random_dataset(seed: u64) -> ActivationDataset {
    let mut r = rng(seed);
    let layers = r.random_range(1..=5);
    let dim = r.random_range(1..=24);
    let mut ds = ActivationDataset::new(format!("model-{seed}"), layers, dim);
    ds.provenance = r.random_bool(0.5).then(|| format!("capture note {seed} \u{e9}"));
    let genders = [Gender::Male, Gender::Female, Gender::Unknown];
    let races = [Race::Black, Race::White, Race::Unknown];
    let classes = [Class::Poor, Class::Rich, Class::Unknown];
    let kinds = [
        CueKind::Explicit,
        CueKind::Familial,
        CueKind::Adversarial,
        CueKind::Negative,
        CueKind::Name,
        CueKind::Occupation,
        CueKind::CulturalItem,
    ];
    for i in 0..r.random_range(0..40) {
        let kind = kinds[r.random_range(0..kinds.len())];
        ds.records.push(ActivationRecord {
            prompt_id: format!("p{seed}-{i}"),
            turn_index: r.random_range(1..=5),
            language_code: MIX_LANGUAGES[r.random_range(0..MIX_LANGUAGES.len())].into(),
            cue_kind: kind,
            item_id: r.random_bool(0.5).then(|| format!("item{}", r.random_range(0..9))),
            labels: AttributeLabel {
                gender: genders[r.random_range(0..3)],
                race: races[r.random_range(0..3)],
                class: classes[r.random_range(0..3)],
            },
            vectors: (0..layers).map(|_| (0..dim).map(|_| r.random_range(-50.0f32..50.0)).collect()).collect(),
        });
    }
    ds
}

fn format_round_trip() -> Outcome {
    let mut total = 0;
    for seed in 0..100 {
        let ds = random_dataset(seed);
        let bytes = ok(encode(&ds))?;
        let back = ok(decode(&bytes))?;
        ensure!(back == ds, "seed {seed}: decoded dataset differs");
        ensure!(ok(encode(&back))? == bytes, "seed {seed}: re-serialized bytes differ");
        total += bytes.len();
    }
    let dir = ok(tempfile::tempdir())?;
    let p = dir.path().join("bad.actv");
    let mut bytes = ok(encode(&random_dataset(1)))?;
    bytes[0] ^= 0xff;
    ok(fs::write(&p, &bytes))?;
    let err = match read_dataset(&p) {
        Ok(_) => return Err("corrupted magic was accepted".into()),
        Err(e) => e.to_string(),
    };
    Ok(format!("100 datasets ({total} bytes) byte-identical; corrupted magic rejected ({err})"))
}

fn pseudo_translations(bank: &TemplateBank, prompts: &[LabeledPrompt]) -> TranslationBank {
    let mut tr = TranslationBank::default();
    for lang in MIX_LANGUAGES {
        for t in &bank.templates {
            tr.insert(&t.template_id, lang, format!("[{lang}] {}", t.text));
        }
        for p in prompts {
            for s in &p.substitutions {
                tr.insert(&format!("@{}", s.text), lang, format!("<{lang}:{}>", s.text));
            }
        }
    }
    tr
}

fn corpus_generation() -> Outcome {
    let bank = TemplateBank::builtin();
    let ps = ok(gen_explicit_corpus(&bank, 2500, 17))?;
    ensure!(ps.len() == 2500, "{} prompts", ps.len());
    let mut cells = [0usize; 8];
    for p in &ps {
        cells[cell_of(&p.labels).ok_or("prompt outside the intersectional cells")?] += 1;
    }
    ensure!(cells.iter().all(|c| *c == 312 || *c == 313), "cell counts {cells:?}");
    let mixed = ok(gen_multilingual_mix(&ps, &bank, &pseudo_translations(&bank, &ps), 0.25, 17))?;
    let translated: Vec<&LabeledPrompt> = mixed.iter().filter(|p| p.language_code != "en").collect();
    ensure!(translated.len() == 625, "{} translated prompts", translated.len());
    for (j, p) in translated.iter().enumerate() {
        ensure!(p.language_code == MIX_LANGUAGES[j % 10], "prompt {} breaks the round-robin", p.prompt_id);
    }
    let mut per_lang: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &translated {
        *per_lang.entry(p.language_code.as_str()).or_default() += 1;
    }
    ensure!(per_lang.len() == 10, "{} languages", per_lang.len());
    ensure!(per_lang.values().all(|&c| c == 62 || c == 63), "language counts {per_lang:?}");
    let fam = ok(gen_validation_prompts(&bank, ValidationKind::Familial, 0))?;
    let dad = fam.iter().find(|p| p.text.starts_with("As a single dad")).ok_or("no single-dad prompt")?;
    ensure!(dad.labels.gender == Gender::Male, "single dad labeled {:?}", dad.labels.gender);
    Ok(format!("cells {cells:?}, 10 languages x 62/63, single dad labeled male"))
}

fn scripted_cassette(pairs: &[OccupationPair], p_stereotypical: f64, p_refusal: f64, dir: &Path) -> Result<Cassette, String> {
    let cfg = EvalConfig::default();
    let responder = SyntheticChat {
        pairs: pairs.to_vec(),
        cue_gender: BTreeMap::new(),
        p_refusal,
        p_other: 0.0,
        p_stereotypical,
        sports: BTreeMap::new(),
        seed: 7,
    };
    let rec = RecordingClient::new(responder, cfg.model.clone(), cfg.temperature);
    for c in [Condition::ExplicitMale, Condition::ExplicitFemale] {
        ok(career_eval(pairs, c, &[], 5, &rec, &cfg))?;
    }
    let p = dir.join(format!("scripted-{p_stereotypical}-{p_refusal}.jsonl"));
    ok(rec.into_cassette().save(&p))?;
    ok(Cassette::load(&p))
}

fn replay_report(pairs: &[OccupationPair], cassette: Cassette) -> Result<(String, Vec<demoscope::downstream_eval::CareerResult>), String> {
    let cfg = EvalConfig::default();
    let client = ReplayClient::new(cassette);
    let results: Vec<_> = [Condition::ExplicitMale, Condition::ExplicitFemale]
        .into_iter()
        .map(|c| career_eval(pairs, c, &[], 5, &client, &cfg))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok((ok(career_report_csv(&results))?, results))
}

fn downstream_replay() -> Outcome {
    let pairs = ok(read_pairs_csv(ok(fs::File::open(fixtures().join("career_pairs.csv")))?))?;
    let fixture = fixtures().join("career_cassette.jsonl");
    let cassette = ok(Cassette::load(&fixture))?;
    ensure!(pairs.len() == 200 && cassette.entries.len() == 2000, "fixture has {} pairs, {} entries", pairs.len(), cassette.entries.len());
    let (first, _) = replay_report(&pairs, cassette)?;
    let (second, _) = replay_report(&pairs, ok(Cassette::load(&fixture))?)?;
    ensure!(first == second, "replayed reports differ");
    let dir = ok(tempfile::tempdir())?;
    let (_, all) = replay_report(&pairs, scripted_cassette(&pairs, 1.0, 0.0, dir.path())?)?;
    for r in &all {
        let o = &r.overall;
        ensure!(o.fraction == 1.0 && o.ci_lo == o.ci_hi, "{}: fraction {} CI [{}, {}]", r.condition, o.fraction, o.ci_lo, o.ci_hi);
    }
    let (_, refusing) = replay_report(&pairs, scripted_cassette(&pairs, 1.0, 0.99, dir.path())?)?;
    let mut rates = Vec::new();
    for r in &refusing {
        ensure!(r.overall.refusal_rate > 0.98, "{}: refusal rate {}", r.condition, r.overall.refusal_rate);
        rates.push(format!("{:.4}", r.overall.refusal_rate));
    }
    Ok(format!(
        "2,000-entry fixture replays byte-identically; all-stereotypical 1.0 with zero-width CI; refusal rates {}",
        rates.join("/")
    ))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline_determinism() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let manifest = dir.path().join("run.json");
    ok(fs::write(
        &manifest,
        r#"{
  "seed": 20,
  "stages": ["synth-oracle", "train-probes", "scale-items", "agree-survey", "steer-sweep", "report"],
  "oracle": {"mu": 3.0, "n_per_class": 300, "dim": 32},
  "steering": {"repetitions": 100}
}
"#,
    ))?;
    let m = manifest.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    demoscope(&["run", "--manifest", m, "--out", a.to_str().unwrap()])?;
    demoscope(&["run", "--manifest", m, "--out", b.to_str().unwrap(), "--jobs", "1"])?;
    let (ta, tb) = (tree(&a), tree(&b));
    ensure!(ta.len() >= 15, "only {} files written", ta.len());
    ensure!(ta.keys().eq(tb.keys()), "file sets differ");
    for (k, v) in &ta {
        ensure!(tb[k] == *v, "{} differs between runs", k.display());
    }
    Ok(format!("{} files identical across two runs", ta.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("planted-direction recovery", planted_recovery),
        ("Bayes-gap check", bayes_gap),
        ("AUC oracle equivalence", auc_equivalence),
        ("gradient check", gradient_check),
        ("steering dose-response", steering_dose_response),
        ("statistics suite", statistics_suite),
        ("format round-trip", format_round_trip),
        ("corpus generation", corpus_generation),
        ("downstream replay determinism", downstream_replay),
        ("end-to-end pipeline determinism", pipeline_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
