use std::collections::HashSet;
use std::io::BufRead;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bank::{item_slot, ItemSpec, PromptTemplate, TemplateBank, TranslationBank, MIX_LANGUAGES};
use crate::activation_store::{AttributeLabel, Axis, CueKind, Gender};
use crate::error::{domain, Result};
use crate::util::{derive_seed, rng};

/// One filled placeholder: `key` names the substituted value, `text` is the
/// inserted surface form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub placeholder: String,
    pub key: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrompt {
    pub prompt_id: String,
    /// For multi-turn conversations, the user message of this turn only.
    pub text: String,
    pub labels: AttributeLabel,
    pub cue_kind: CueKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    pub language_code: String,
    pub turn_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(default)]
    pub substitutions: Vec<Substitution>,
}

pub fn write_prompts_jsonl(prompts: &[LabeledPrompt]) -> Result<String> {
    let mut out = String::new();
    for p in prompts {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_prompts_jsonl(r: impl BufRead) -> Result<Vec<LabeledPrompt>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if !crate::util::skip_line(&line) {
            out.push(serde_json::from_str(&line).map_err(|e| domain(format!("prompt line {}: {e}", i + 1)))?);
        }
    }
    Ok(out)
}

/// First-person clause stating the user's value on an axis.
fn user_phrase(axis: Axis, positive: bool) -> (&'static str, &'static str) {
    match (axis, positive) {
        (Axis::Gender, true) => ("female", "I'm a woman"),
        (Axis::Gender, false) => ("male", "I'm a man"),
        (Axis::Race, true) => ("white", "I'm White"),
        (Axis::Race, false) => ("black", "I'm Black"),
        (Axis::Class, true) => ("rich", "I'm rich"),
        (Axis::Class, false) => ("poor", "I'm poor"),
    }
}

/// Predicate form ("I'm {x}") and adjective form ("my {x} neighbor").
fn value_words(axis: Axis, positive: bool) -> (&'static str, &'static str, &'static str) {
    match (axis, positive) {
        (Axis::Gender, true) => ("female", "a woman", "female"),
        (Axis::Gender, false) => ("male", "a man", "male"),
        (Axis::Race, true) => ("white", "White", "White"),
        (Axis::Race, false) => ("black", "Black", "Black"),
        (Axis::Class, true) => ("rich", "rich", "rich"),
        (Axis::Class, false) => ("poor", "poor", "poor"),
    }
}

const RELATIONS: [&str; 6] = ["neighbor", "coworker", "roommate", "cousin", "boss", "best friend"];

/// Roles whose mention implies the speaker's gender.
pub const FAMILIAL_ROLES: [(&str, Gender); 8] = [
    ("single dad", Gender::Male),
    ("single mom", Gender::Female),
    ("husband", Gender::Male),
    ("wife", Gender::Female),
    ("father", Gender::Male),
    ("mother", Gender::Female),
    ("dad", Gender::Male),
    ("mom", Gender::Female),
];

pub fn familial_gender(role: &str) -> Option<Gender> {
    FAMILIAL_ROLES.iter().find(|(r, _)| *r == role).map(|(_, g)| *g)
}

fn parse_value(axis: Axis, key: &str) -> Option<bool> {
    [true, false].into_iter().find(|&p| value_words(axis, p).0 == key)
}

/// Labels implied by a substitution record alone (plus any fixed template
/// labels). Third-party mentions never contribute.
pub fn recover_labels(subs: &[Substitution], fixed: Option<AttributeLabel>) -> AttributeLabel {
    let mut l = fixed.unwrap_or_default();
    for s in subs {
        let axis = match s.placeholder.as_str() {
            "GENDER_PHRASE" => Some(Axis::Gender),
            "RACE_PHRASE" => Some(Axis::Race),
            "CLASS_PHRASE" => Some(Axis::Class),
            "USER_VALUE" => s.key.split_once('=').and_then(|(a, _)| a.parse().ok()),
            "FAMILIAL_ROLE" => {
                if let Some(g) = familial_gender(&s.key) {
                    l.gender = g;
                }
                None
            }
            _ => None,
        };
        if let Some(a) = axis {
            let v = s.key.rsplit('=').next().unwrap_or(&s.key);
            if let Some(p) = parse_value(a, v) {
                l = l.with_target(a, p);
            }
        }
    }
    l
}

/// Fills placeholders from `subs`, capitalizing fragments that open a
/// sentence.
pub fn render(text: &str, subs: &[Substitution]) -> Result<String> {
    let mut out = String::with_capacity(text.len() + 32);
    let mut rest = text;
    while let Some(s) = rest.find('{') {
        out.push_str(&rest[..s]);
        let after = &rest[s + 1..];
        let e = after.find('}').ok_or_else(|| domain(format!("unterminated placeholder in {text:?}")))?;
        let name = &after[..e];
        let sub = subs
            .iter()
            .find(|x| x.placeholder == name)
            .ok_or_else(|| domain(format!("no substitution for {{{name}}}")))?;
        let trimmed = out.trim_end();
        let sentence_start = trimmed.is_empty() || trimmed.ends_with(['.', '!', '?']);
        if sentence_start {
            let mut c = sub.text.chars();
            if let Some(f) = c.next() {
                out.extend(f.to_uppercase());
                out.push_str(c.as_str());
            }
        } else {
            out.push_str(&sub.text);
        }
        rest = &after[e + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn sub(placeholder: &str, key: impl Into<String>, text: impl Into<String>) -> Substitution {
    Substitution { placeholder: placeholder.into(), key: key.into(), text: text.into() }
}

/// Label of intersectional cell `c`: bit 0 female, bit 1 white, bit 2 rich.
pub fn cell_label(c: usize) -> AttributeLabel {
    AttributeLabel::unknown()
        .with_target(Axis::Gender, c & 1 == 1)
        .with_target(Axis::Race, c & 2 == 2)
        .with_target(Axis::Class, c & 4 == 4)
}

pub fn cell_of(l: &AttributeLabel) -> Option<usize> {
    Some(
        l.target(Axis::Gender)? as usize
            | (l.target(Axis::Race)? as usize) << 1
            | (l.target(Axis::Class)? as usize) << 2,
    )
}

fn explicit_subs(label: &AttributeLabel, r: &mut impl Rng) -> Vec<Substitution> {
    let mut subs = Vec::with_capacity(4);
    for (ph, axis) in [("GENDER_PHRASE", Axis::Gender), ("RACE_PHRASE", Axis::Race), ("CLASS_PHRASE", Axis::Class)] {
        let (k, t) = user_phrase(axis, label.target(axis) == Some(1));
        subs.push(sub(ph, k, t));
    }
    let axis = Axis::ALL[r.random_range(0..3)];
    let other = label.target(axis) != Some(1);
    let relation = RELATIONS[r.random_range(0..RELATIONS.len())];
    let (k, pred, _) = value_words(axis, other);
    subs.push(sub("THIRD_PARTY_PHRASE", format!("{relation}|{axis}={k}"), format!("my {relation} is {pred}")));
    subs
}

/// Explicit-disclosure positives balanced over the eight intersectional
/// cells. Cell `c` receives every eighth prompt, so cell sizes differ by at
/// most one; templates rotate within each cell. The output order is shuffled.
pub fn gen_explicit_corpus(bank: &TemplateBank, n: usize, seed: u64) -> Result<Vec<LabeledPrompt>> {
    let templates = bank.of_kind(CueKind::Explicit);
    if templates.is_empty() {
        return Err(domain("template bank has no English explicit templates"));
    }
    if n < 8 {
        return Err(domain(format!("an explicit corpus needs at least 8 prompts, got {n}")));
    }
    let mut r = rng(derive_seed(seed, "explicit"));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (cell, k) = (i % 8, i / 8);
        let t = templates[(k + cell) % templates.len()];
        let label = cell_label(cell);
        let subs = explicit_subs(&label, &mut r);
        out.push(LabeledPrompt {
            prompt_id: String::new(),
            text: render(&t.text, &subs)?,
            labels: recover_labels(&subs, None),
            cue_kind: CueKind::Explicit,
            item_id: None,
            language_code: "en".into(),
            turn_index: 1,
            template_id: Some(t.template_id.clone()),
            substitutions: subs,
        });
    }
    out.shuffle(&mut r);
    for (i, p) in out.iter_mut().enumerate() {
        p.prompt_id = format!("explicit-{i:05}");
    }
    Ok(out)
}

/// `n` distinct questions drawn without replacement; every label unknown.
pub fn gen_negative_corpus(questions: &[String], n: usize, seed: u64) -> Result<Vec<LabeledPrompt>> {
    let mut seen = HashSet::new();
    let distinct: Vec<&String> = questions.iter().filter(|q| seen.insert(q.as_str())).collect();
    if distinct.len() < n {
        return Err(domain(format!("question bank has {} distinct entries, need {n}", distinct.len())));
    }
    let mut r = rng(derive_seed(seed, "negative"));
    Ok(index::sample(&mut r, distinct.len(), n)
        .into_iter()
        .enumerate()
        .map(|(i, q)| LabeledPrompt {
            prompt_id: format!("negative-{i:05}"),
            text: distinct[q].clone(),
            labels: AttributeLabel::unknown(),
            cue_kind: CueKind::Negative,
            item_id: None,
            language_code: "en".into(),
            turn_index: 1,
            template_id: None,
            substitutions: Vec::new(),
        })
        .collect())
}

fn compatible<'a>(bank: &'a TemplateBank, item: &ItemSpec) -> Vec<&'a PromptTemplate> {
    bank.of_kind(item.cue_kind)
        .into_iter()
        .filter(|t| t.category.as_deref().is_none_or(|c| c == item.category))
        .collect()
}

/// `per_item` prompts per item, rotating through the item's compatible
/// templates from a seeded starting offset.
pub fn gen_item_prompts(bank: &TemplateBank, items: &[ItemSpec], per_item: usize, seed: u64) -> Result<Vec<LabeledPrompt>> {
    if per_item == 0 {
        return Err(domain("per_item must be at least 1"));
    }
    let mut out = Vec::with_capacity(items.len() * per_item);
    for item in items {
        if !item.cue_kind.is_item() {
            return Err(domain(format!("item {} has non-item cue kind {}", item.item_id, item.cue_kind.as_str())));
        }
        let ts = compatible(bank, item);
        if ts.is_empty() {
            return Err(domain(format!("item {} has no compatible template", item.item_id)));
        }
        let offset = rng(derive_seed(seed, &format!("item:{}", item.item_id))).random_range(0..ts.len());
        for p in 0..per_item {
            let t = ts[(offset + p) % ts.len()];
            let subs = vec![sub(item_slot(item.cue_kind), item.item_id.clone(), item.text.clone())];
            out.push(LabeledPrompt {
                prompt_id: format!("{}-{}-{p:03}", item.cue_kind.as_str(), item.item_id),
                text: render(&t.text, &subs)?,
                labels: AttributeLabel::unknown(),
                cue_kind: item.cue_kind,
                item_id: Some(item.item_id.clone()),
                language_code: "en".into(),
                turn_index: 1,
                template_id: Some(t.template_id.clone()),
                substitutions: subs,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationKind {
    Familial,
    Adversarial,
    Multiturn,
}

impl std::str::FromStr for ValidationKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "familial" => Ok(Self::Familial),
            "adversarial" => Ok(Self::Adversarial),
            "multiturn" => Ok(Self::Multiturn),
            other => Err(domain(format!("unknown validation kind {other:?}"))),
        }
    }
}

/// Robustness-check prompts. Familial prompts imply gender through a role
/// word; adversarial prompts mention a third party whose value on the tested
/// axis is the opposite of the user's; multiturn yields one five-turn
/// conversation per intersectional cell.
pub fn gen_validation_prompts(bank: &TemplateBank, kind: ValidationKind, seed: u64) -> Result<Vec<LabeledPrompt>> {
    match kind {
        ValidationKind::Familial => gen_familial(bank),
        ValidationKind::Adversarial => gen_adversarial(bank),
        ValidationKind::Multiturn => gen_multiturn(bank, 8, 5, seed),
    }
}

fn gen_familial(bank: &TemplateBank) -> Result<Vec<LabeledPrompt>> {
    let ts = bank.of_kind(CueKind::Familial);
    if ts.is_empty() {
        return Err(domain("template bank has no familial templates"));
    }
    let mut out = Vec::new();
    for t in ts {
        for (role, _) in FAMILIAL_ROLES {
            let subs = vec![sub("FAMILIAL_ROLE", role, role)];
            out.push(LabeledPrompt {
                prompt_id: format!("familial-{:04}", out.len()),
                text: render(&t.text, &subs)?,
                labels: recover_labels(&subs, t.labels),
                cue_kind: CueKind::Familial,
                item_id: None,
                language_code: "en".into(),
                turn_index: 1,
                template_id: Some(t.template_id.clone()),
                substitutions: subs,
            });
        }
    }
    Ok(out)
}

fn gen_adversarial(bank: &TemplateBank) -> Result<Vec<LabeledPrompt>> {
    let ts = bank.of_kind(CueKind::Adversarial);
    if ts.is_empty() {
        return Err(domain("template bank has no adversarial templates"));
    }
    let mut out = Vec::new();
    for t in ts {
        let axis = t.axis.expect("validated adversarial template has an axis");
        for user in [false, true] {
            let (uk, upred, _) = value_words(axis, user);
            let (ok, _, oadj) = value_words(axis, !user);
            let subs = vec![
                sub("USER_VALUE", format!("{axis}={uk}"), upred),
                sub("OTHER_VALUE", format!("{axis}={ok}"), oadj),
            ];
            out.push(LabeledPrompt {
                prompt_id: format!("adversarial-{:04}", out.len()),
                text: render(&t.text, &subs)?,
                labels: recover_labels(&subs, t.labels),
                cue_kind: CueKind::Adversarial,
                item_id: None,
                language_code: "en".into(),
                turn_index: 1,
                template_id: Some(t.template_id.clone()),
                substitutions: subs,
            });
        }
    }
    Ok(out)
}

/// Conversations opening with an explicit disclosure followed by neutral
/// follow-up turns; every turn carries the disclosed labels.
pub fn gen_multiturn(bank: &TemplateBank, conversations: usize, turns: u32, seed: u64) -> Result<Vec<LabeledPrompt>> {
    if turns < 1 {
        return Err(domain("a conversation needs at least one turn"));
    }
    let followups: Vec<&PromptTemplate> =
        bank.of_kind(CueKind::Negative).into_iter().filter(|t| t.category.as_deref() == Some("followup")).collect();
    if turns > 1 && followups.is_empty() {
        return Err(domain("template bank has no follow-up templates"));
    }
    let explicit = bank.of_kind(CueKind::Explicit);
    if explicit.is_empty() {
        return Err(domain("template bank has no English explicit templates"));
    }
    let mut r = rng(derive_seed(seed, "multiturn"));
    let mut out = Vec::new();
    for c in 0..conversations {
        let label = cell_label(c % 8);
        let t = explicit[r.random_range(0..explicit.len())];
        let subs = explicit_subs(&label, &mut r);
        let id = format!("multiturn-{c:04}");
        let labels = recover_labels(&subs, None);
        out.push(LabeledPrompt {
            prompt_id: id.clone(),
            text: render(&t.text, &subs)?,
            labels,
            cue_kind: CueKind::Explicit,
            item_id: None,
            language_code: "en".into(),
            turn_index: 1,
            template_id: Some(t.template_id.clone()),
            substitutions: subs.clone(),
        });
        let start = r.random_range(0..followups.len().max(1));
        for turn in 2..=turns {
            let f = followups[(start + turn as usize) % followups.len()];
            out.push(LabeledPrompt {
                prompt_id: id.clone(),
                text: f.text.clone(),
                labels,
                cue_kind: CueKind::Explicit,
                item_id: None,
                language_code: "en".into(),
                turn_index: turn,
                template_id: Some(f.template_id.clone()),
                substitutions: subs.clone(),
            });
        }
    }
    Ok(out)
}

fn translate(p: &LabeledPrompt, bank: &TemplateBank, tr: &TranslationBank, lang: &str) -> Result<String> {
    let missing = |what: &str| domain(format!("no {lang} translation for {what}"));
    let Some(tid) = &p.template_id else {
        return tr.get(&format!("@{}", p.text), lang).map(str::to_string).ok_or_else(|| missing(&format!("prompt {}", p.prompt_id)));
    };
    let text = tr.get(tid, lang).ok_or_else(|| missing(&format!("template {tid}")))?;
    let used = bank.get(tid).map(|t| t.placeholders()).unwrap_or_else(|| {
        p.substitutions.iter().map(|s| s.placeholder.clone()).collect()
    });
    let mut subs = Vec::new();
    for s in p.substitutions.iter().filter(|s| used.contains(&s.placeholder)) {
        let t = tr
            .get(&format!("@{}", s.text), lang)
            .ok_or_else(|| missing(&format!("fragment {:?} of template {tid}", s.text)))?;
        subs.push(Substitution { text: t.to_string(), ..s.clone() });
    }
    render(text, &subs)
}

/// Replaces `round(fraction * n)` seeded-chosen prompts by translations,
/// assigning languages round-robin in prompt order. Labels are kept.
pub fn gen_multilingual_mix(
    prompts: &[LabeledPrompt],
    bank: &TemplateBank,
    translations: &TranslationBank,
    fraction: f64,
    seed: u64,
) -> Result<Vec<LabeledPrompt>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(domain("fraction must lie in [0, 1]"));
    }
    let k = (fraction * prompts.len() as f64).round() as usize;
    let mut r = rng(derive_seed(seed, "multilingual"));
    let mut chosen = index::sample(&mut r, prompts.len(), k).into_vec();
    chosen.sort_unstable();
    let mut out = prompts.to_vec();
    for (j, &i) in chosen.iter().enumerate() {
        let lang = MIX_LANGUAGES[j % MIX_LANGUAGES.len()];
        out[i].text = translate(&prompts[i], bank, translations, lang)?;
        out[i].language_code = lang.to_string();
    }
    Ok(out)
}
