use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};

use crate::activation_store::{AttributeLabel, Axis, CueKind};
use crate::error::{domain, Result};

pub const PLACEHOLDERS: [&str; 10] = [
    "GENDER_PHRASE",
    "RACE_PHRASE",
    "CLASS_PHRASE",
    "THIRD_PARTY_PHRASE",
    "NAME",
    "JOB",
    "ITEM",
    "FAMILIAL_ROLE",
    "USER_VALUE",
    "OTHER_VALUE",
];

const BUILTIN_TEMPLATES: &str = include_str!("../../assets/templates.jsonl");
const BUILTIN_ITEMS: &str = include_str!("../../assets/items.csv");
const BUILTIN_QUESTIONS: &str = include_str!("../../assets/questions.txt");

/// The ten target languages of the multilingual mix.
pub const MIX_LANGUAGES: [&str; 10] = ["ar", "de", "es", "fr", "hi", "it", "ja", "pt", "ru", "tr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub text: String,
    pub kind: CueKind,
    pub language_code: String,
    /// Restricts item templates to one item category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Tested axis of an adversarial template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Axis>,
    /// Labels implied by fixed template text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<AttributeLabel>,
}

impl PromptTemplate {
    pub fn placeholders(&self) -> Vec<String> {
        placeholders_in(&self.text)
    }

    pub fn validate(&self) -> Result<()> {
        let ph = self.placeholders();
        let id = &self.template_id;
        if let Some(p) = ph.iter().find(|p| !PLACEHOLDERS.contains(&p.as_str())) {
            return Err(domain(format!("template {id}: placeholder {{{p}}} has no substitution bank")));
        }
        let has = |p: &str| ph.iter().any(|x| x == p);
        match self.kind {
            CueKind::Explicit => {
                for p in ["GENDER_PHRASE", "RACE_PHRASE", "CLASS_PHRASE", "THIRD_PARTY_PHRASE"] {
                    if !has(p) {
                        return Err(domain(format!("explicit template {id} lacks {{{p}}}")));
                    }
                }
                if ["NAME", "JOB", "ITEM"].iter().any(|p| has(p)) {
                    return Err(domain(format!("explicit template {id} uses an item placeholder")));
                }
            }
            CueKind::Name | CueKind::Occupation | CueKind::CulturalItem => {
                let slot = item_slot(self.kind);
                if !has(slot) {
                    return Err(domain(format!("item template {id} lacks {{{slot}}}")));
                }
            }
            CueKind::Familial if !has("FAMILIAL_ROLE") => {
                return Err(domain(format!("familial template {id} lacks {{FAMILIAL_ROLE}}")));
            }
            CueKind::Adversarial if !(has("USER_VALUE") && has("OTHER_VALUE") && self.axis.is_some()) => {
                return Err(domain(format!("adversarial template {id} needs an axis, {{USER_VALUE}} and {{OTHER_VALUE}}")));
            }
            _ => {}
        }
        Ok(())
    }
}

pub(crate) fn item_slot(kind: CueKind) -> &'static str {
    match kind {
        CueKind::Name => "NAME",
        CueKind::Occupation => "JOB",
        _ => "ITEM",
    }
}

fn placeholders_in(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(s) = rest.find('{') {
        let after = &rest[s + 1..];
        match after.find('}') {
            Some(e) => {
                out.push(after[..e].to_string());
                rest = &after[e + 1..];
            }
            None => break,
        }
    }
    out
}

/// A parsed and validated template collection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemplateBank {
    pub templates: Vec<PromptTemplate>,
}

impl TemplateBank {
    pub fn new(templates: Vec<PromptTemplate>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &templates {
            t.validate()?;
            if !seen.insert(t.template_id.clone()) {
                return Err(domain(format!("duplicate template id {}", t.template_id)));
            }
        }
        Ok(Self { templates })
    }

    /// Parses UTF-8 JSON-lines, one template per non-blank line.
    pub fn from_jsonl(r: impl BufRead) -> Result<Self> {
        let mut templates = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if crate::util::skip_line(&line) {
                continue;
            }
            templates.push(
                serde_json::from_str(&line).map_err(|e| domain(format!("template bank line {}: {e}", i + 1)))?,
            );
        }
        Self::new(templates)
    }

    pub fn builtin() -> Self {
        Self::from_jsonl(BUILTIN_TEMPLATES.as_bytes()).expect("bundled template bank is valid")
    }

    pub fn of_kind(&self, kind: CueKind) -> Vec<&PromptTemplate> {
        self.templates.iter().filter(|t| t.kind == kind && t.language_code == "en").collect()
    }

    pub fn get(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.template_id == id)
    }
}

/// One implicit-cue item to elicit prompts for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub item_id: String,
    pub cue_kind: CueKind,
    pub category: String,
    /// Surface form inserted into templates.
    pub text: String,
}

/// Reads an item bank CSV with columns `item_id,cue_kind,category,text`.
pub fn read_item_bank(r: impl Read) -> Result<Vec<ItemSpec>> {
    let mut out = Vec::new();
    for row in crate::util::csv_reader(r).deserialize::<ItemSpec>() {
        let row = row?;
        if !row.cue_kind.is_item() {
            return Err(domain(format!("item {} has non-item cue kind {}", row.item_id, row.cue_kind.as_str())));
        }
        out.push(row);
    }
    Ok(out)
}

pub fn builtin_items() -> Vec<ItemSpec> {
    read_item_bank(BUILTIN_ITEMS.as_bytes()).expect("bundled item bank is valid")
}

/// One question per non-blank line; lines starting with `#` are skipped.
pub fn read_question_bank(r: impl BufRead) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if !crate::util::skip_line(t) {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

pub fn builtin_questions() -> Vec<String> {
    read_question_bank(BUILTIN_QUESTIONS.as_bytes()).expect("bundled question bank is valid")
}

/// Translations keyed by `(template_id, language_code)`. Keys starting with
/// `@` translate a substituted fragment (`@` followed by its English text) or
/// an untemplated prompt (`@` followed by the whole text).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TranslationBank {
    pub entries: BTreeMap<(String, String), String>,
}

#[derive(Debug, Deserialize)]
struct TranslationRow {
    template_id: String,
    language_code: String,
    text: String,
}

impl TranslationBank {
    pub fn from_csv(r: impl Read) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for row in crate::util::csv_reader(r).deserialize::<TranslationRow>() {
            let row = row?;
            let key = (row.template_id.clone(), row.language_code.clone());
            if entries.insert(key, row.text).is_some() {
                return Err(domain(format!(
                    "duplicate translation for {} in {}",
                    row.template_id, row.language_code
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["template_id", "language_code", "text"])?;
        for ((id, lang), text) in &self.entries {
            w.write_record([id, lang, text])?;
        }
        crate::probe_lab::finish_csv(w)
    }

    pub fn insert(&mut self, key: &str, lang: &str, text: impl Into<String>) {
        self.entries.insert((key.to_string(), lang.to_string()), text.into());
    }

    pub fn get(&self, key: &str, lang: &str) -> Option<&str> {
        self.entries.get(&(key.to_string(), lang.to_string())).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_banks_load() {
        let b = TemplateBank::builtin();
        assert!(b.of_kind(CueKind::Explicit).len() >= 8);
        assert!(!b.of_kind(CueKind::Familial).is_empty());
        assert_eq!(builtin_items().len(), 57);
        assert_eq!(builtin_questions().len(), 60);
    }

    #[test]
    fn template_validation() {
        let t = |kind, text: &str| PromptTemplate {
            template_id: "t".into(),
            text: text.into(),
            kind,
            language_code: "en".into(),
            category: None,
            axis: None,
            labels: None,
        };
        assert!(t(CueKind::Explicit, "{GENDER_PHRASE} {RACE_PHRASE} {CLASS_PHRASE}").validate().is_err());
        assert!(t(CueKind::Explicit, "{GENDER_PHRASE} {RACE_PHRASE} {CLASS_PHRASE} {THIRD_PARTY_PHRASE}").validate().is_ok());
        assert!(t(CueKind::Explicit, "{GENDER_PHRASE} {RACE_PHRASE} {CLASS_PHRASE} {THIRD_PARTY_PHRASE} {ITEM}").validate().is_err());
        assert!(t(CueKind::Occupation, "I am a {JOB}").validate().is_ok());
        assert!(t(CueKind::Occupation, "I am a {ITEM}").validate().is_err());
        assert!(t(CueKind::Negative, "{MYSTERY}").validate().is_err());
        assert!(t(CueKind::Adversarial, "{USER_VALUE} {OTHER_VALUE}").validate().is_err());
    }

    #[test]
    fn translation_csv_round_trip() {
        let mut b = TranslationBank::default();
        b.insert("explicit-01", "fr", "Bonjour, {GENDER_PHRASE}");
        b.insert("@I'm a woman", "fr", "je suis une femme");
        let again = TranslationBank::from_csv(b.to_csv().unwrap().as_bytes()).unwrap();
        assert_eq!(b, again);
    }
}
