//! Keyword snippets from a plain-text corpus, annotation ingestion, and the
//! comparison of annotated gender fractions with probe scales.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rand::seq::index;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::activation_store::Axis;
use crate::error::{domain, Error, Result};
use crate::item_scaler::ItemScale;
use crate::probe_lab::finish_csv;
use crate::stat_lab::{cohen_kappa, pearson, CorrelationResult};
use crate::util::{derive_seed, rng};

pub const MIN_WINDOW: usize = 32;

/// One surface form of an item. Plurals and other inflections are separate
/// keywords of the same item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    pub item: String,
    pub form: String,
}

pub fn read_keywords_csv(r: impl Read) -> Result<Vec<Keyword>> {
    crate::util::csv_reader(r).deserialize().map(|k| Ok(k?)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub snippet_id: String,
    pub item_id: String,
    /// Matched text as it appears in the corpus.
    pub keyword: String,
    pub text: String,
    /// Byte offset of the match in the decompressed corpus.
    pub source_offset: u64,
}

/// Case-insensitive, word-bounded matcher over every keyword form. At a
/// given position the longest form wins.
#[derive(Debug, Clone)]
pub struct KeywordMatcher {
    regex: Regex,
    items: Vec<String>,
}

impl KeywordMatcher {
    pub fn new(keywords: &[Keyword]) -> Result<Self> {
        if keywords.is_empty() {
            return Err(domain("keyword list is empty"));
        }
        let mut forms: BTreeMap<String, &str> = BTreeMap::new();
        for k in keywords {
            let form = k.form.trim();
            let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
            if !word(form.chars().next()) || !word(form.chars().last()) {
                return Err(domain(format!("keyword {:?} must start and end with a word character", k.form)));
            }
            if let Some(prev) = forms.insert(form.to_lowercase(), &k.item) {
                if prev != k.item {
                    return Err(domain(format!("keyword {form:?} belongs to both {prev} and {}", k.item)));
                }
            }
        }
        let mut ordered: Vec<(String, &str)> = forms.into_iter().collect();
        ordered.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()).then_with(|| a.0.cmp(&b.0)));
        let alternation: Vec<String> = ordered.iter().map(|(f, _)| format!("({})", regex::escape(f))).collect();
        let regex = Regex::new(&format!(r"(?i)\b(?:{})\b", alternation.join("|")))
            .map_err(|e| domain(format!("keyword pattern: {e}")))?;
        Ok(Self { regex, items: ordered.into_iter().map(|(_, i)| i.to_string()).collect() })
    }

    /// Non-overlapping matches as `(byte range, item)`.
    pub fn find_all<'a>(&'a self, text: &'a str) -> impl Iterator<Item = (std::ops::Range<usize>, &'a str)> + 'a {
        self.regex.captures_iter(text).map(|c| {
            let g = (1..c.len()).find(|&g| c.get(g).is_some()).expect("one alternative matched");
            (c.get(0).expect("whole match").range(), self.items[g - 1].as_str())
        })
    }
}

/// Opens a corpus file, decompressing gzip input transparently.
pub fn open_corpus(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut f = BufReader::new(File::open(path)?);
    let gz = f.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    Ok(if gz { Box::new(BufReader::new(MultiGzDecoder::new(f))) } else { Box::new(f) })
}

/// Streaming scanner over newline-delimited documents. Each match yields
/// one snippet holding up to `window` characters on either side of it,
/// clipped to the document line.
pub struct SnippetScanner<R> {
    reader: R,
    matcher: KeywordMatcher,
    window: usize,
    offset: u64,
    buf: Vec<u8>,
    pending: VecDeque<Snippet>,
    done: bool,
}

pub fn scan_snippets<R: BufRead>(reader: R, keywords: &[Keyword], window: usize) -> Result<SnippetScanner<R>> {
    if window < MIN_WINDOW {
        return Err(domain(format!("window must be at least {MIN_WINDOW} characters, got {window}")));
    }
    Ok(SnippetScanner {
        reader,
        matcher: KeywordMatcher::new(keywords)?,
        window,
        offset: 0,
        buf: Vec::new(),
        pending: VecDeque::new(),
        done: false,
    })
}

fn char_window(line: &str, start: usize, end: usize, window: usize) -> &str {
    let lo = line[..start].char_indices().rev().nth(window - 1).map_or(0, |(i, _)| i);
    let hi = line[end..].char_indices().nth(window).map_or(line.len(), |(i, _)| end + i);
    &line[lo..hi]
}

impl<R: BufRead> SnippetScanner<R> {
    fn next_line(&mut self) -> Result<bool> {
        self.buf.clear();
        let start = self.offset;
        let n = self
            .reader
            .read_until(b'\n', &mut self.buf)
            .map_err(|source| Error::Stream { offset: start, source })?;
        if n == 0 {
            return Ok(false);
        }
        self.offset += n as u64;
        let line = std::str::from_utf8(&self.buf).map_err(|e| Error::Stream {
            offset: start + e.valid_up_to() as u64,
            source: io::Error::new(io::ErrorKind::InvalidData, "corpus is not valid UTF-8"),
        })?;
        let line = line.trim_end_matches(['\n', '\r']);
        for (range, item) in self.matcher.find_all(line) {
            let source_offset = start + range.start as u64;
            self.pending.push_back(Snippet {
                snippet_id: format!("snip-{source_offset:012}"),
                item_id: item.to_string(),
                keyword: line[range.clone()].to_string(),
                text: char_window(line, range.start, range.end, self.window).to_string(),
                source_offset,
            });
        }
        Ok(true)
    }
}

impl<R: BufRead> Iterator for SnippetScanner<R> {
    type Item = Result<Snippet>;

    fn next(&mut self) -> Option<Result<Snippet>> {
        loop {
            if let Some(s) = self.pending.pop_front() {
                return Some(Ok(s));
            }
            if self.done {
                return None;
            }
            match self.next_line() {
                Ok(true) => {}
                Ok(false) => self.done = true,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

pub fn write_snippets_jsonl(snippets: &[Snippet]) -> Result<String> {
    let mut out = String::new();
    for s in snippets {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_snippets_jsonl(r: impl BufRead) -> Result<Vec<Snippet>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if !crate::util::skip_line(&line) {
            out.push(serde_json::from_str(&line).map_err(|e| domain(format!("snippet line {}: {e}", i + 1)))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnippetSample {
    pub snippets: Vec<Snippet>,
    /// Items with fewer than the requested snippets, with their count.
    pub shortfall: BTreeMap<String, usize>,
}

/// Uniform sample of at most `per_item` snippets per item, independent of
/// input order.
pub fn sample_snippets(snippets: &[Snippet], per_item: usize, seed: u64) -> Result<SnippetSample> {
    if per_item == 0 {
        return Err(domain("per_item must be at least 1"));
    }
    let mut by_item: BTreeMap<&str, Vec<&Snippet>> = BTreeMap::new();
    for s in snippets {
        by_item.entry(&s.item_id).or_default().push(s);
    }
    let (mut out, mut shortfall) = (Vec::new(), BTreeMap::new());
    for (item, mut group) in by_item {
        group.sort_by(|a, b| a.snippet_id.cmp(&b.snippet_id));
        if group.len() < per_item {
            shortfall.insert(item.to_string(), group.len());
            out.extend(group.into_iter().cloned());
            continue;
        }
        let mut r = rng(derive_seed(seed, &format!("sample:{item}")));
        let mut picked = index::sample(&mut r, group.len(), per_item).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| group[i].clone()));
    }
    Ok(SnippetSample { snippets: out, shortfall })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationLabel {
    Male,
    Female,
    Unclear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub snippet_id: String,
    pub annotator_id: String,
    pub label: AnnotationLabel,
    /// Cue the annotator relied on (pronoun, title, name), when supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<String>,
}

/// Reads `snippet_id,annotator_id,label[,basis]`, rejecting a second label
/// from the same annotator for the same snippet.
pub fn read_annotations_csv(r: impl Read) -> Result<Vec<AnnotationRecord>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in crate::util::csv_reader(r).deserialize::<AnnotationRecord>() {
        let mut row = row?;
        if row.basis.as_deref().is_some_and(str::is_empty) {
            row.basis = None;
        }
        if !seen.insert((row.snippet_id.clone(), row.annotator_id.clone())) {
            return Err(domain(format!("annotator {} labeled snippet {} twice", row.annotator_id, row.snippet_id)));
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ItemFraction {
    pub n_female: usize,
    pub n_male: usize,
    pub n_unclear: usize,
    pub fraction_female: f64,
}

impl ItemFraction {
    pub fn n_clear(&self) -> usize {
        self.n_female + self.n_male
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractionReport {
    pub fractions: BTreeMap<String, ItemFraction>,
    pub warnings: Vec<String>,
}

impl FractionReport {
    /// `item,n_clear,fraction_female`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["item", "n_clear", "fraction_female"])?;
        for (item, f) in &self.fractions {
            w.write_record([item.as_str(), &f.n_clear().to_string(), &f.fraction_female.to_string()])?;
        }
        finish_csv(w)
    }
}

#[derive(Debug, Deserialize)]
struct FractionRow {
    item: String,
    n_clear: usize,
    fraction_female: f64,
}

pub fn read_fractions_csv(r: impl Read) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for row in crate::util::csv_reader(r).deserialize::<FractionRow>() {
        let row = row?;
        if row.n_clear == 0 || !(0.0..=1.0).contains(&row.fraction_female) {
            return Err(domain(format!("fraction row for {}: need n_clear >= 1 and a fraction in [0, 1]", row.item)));
        }
        if out.insert(row.item.clone(), row.fraction_female).is_some() {
            return Err(domain(format!("item {} appears twice", row.item)));
        }
    }
    Ok(out)
}

/// Female share of clearly gendered annotations per item. Every annotation
/// record counts once; items with no clear label are omitted with a warning.
pub fn aggregate_fractions(snippets: &[Snippet], annotations: &[AnnotationRecord]) -> Result<FractionReport> {
    let item_of: BTreeMap<&str, &str> = snippets.iter().map(|s| (s.snippet_id.as_str(), s.item_id.as_str())).collect();
    let mut counts: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for a in annotations {
        let item = item_of
            .get(a.snippet_id.as_str())
            .ok_or_else(|| domain(format!("annotation refers to unknown snippet {}", a.snippet_id)))?;
        counts.entry(item).or_default()[a.label as usize] += 1;
    }
    let mut report = FractionReport { fractions: BTreeMap::new(), warnings: Vec::new() };
    for (item, [male, female, unclear]) in counts {
        if male + female == 0 {
            report.warnings.push(format!("item {item}: no clearly gendered annotation, omitted"));
            continue;
        }
        report.fractions.insert(
            item.to_string(),
            ItemFraction {
                n_female: female,
                n_male: male,
                n_unclear: unclear,
                fraction_female: female as f64 / (female + male) as f64,
            },
        );
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaReport {
    pub kappa: f64,
    pub shared: usize,
}

/// Cohen's kappa over the three labels on snippets both annotation sets
/// cover.
pub fn annotator_agreement(a: &[AnnotationRecord], b: &[AnnotationRecord]) -> Result<KappaReport> {
    let single = |xs: &[AnnotationRecord]| -> Result<BTreeMap<String, AnnotationLabel>> {
        let mut m = BTreeMap::new();
        for r in xs {
            if m.insert(r.snippet_id.clone(), r.label).is_some() {
                return Err(domain(format!("snippet {} has two labels in one annotation set", r.snippet_id)));
            }
        }
        Ok(m)
    };
    let (ma, mb) = (single(a)?, single(b)?);
    let (la, lb): (Vec<AnnotationLabel>, Vec<AnnotationLabel>) =
        ma.iter().filter_map(|(id, &x)| mb.get(id).map(|&y| (x, y))).unzip();
    if la.len() < 2 {
        return Err(domain(format!("annotation sets share {} snippets, need at least 2", la.len())));
    }
    Ok(KappaReport { kappa: cohen_kappa(&la, &lb)?, shared: la.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusPoint {
    pub item: String,
    pub fraction_female: f64,
    pub mean_logit: f64,
    pub fitted_logit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusCorrelation {
    pub result: CorrelationResult,
    /// Least-squares line `mean_logit = intercept + slope * fraction_female`.
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<CorpusPoint>,
}

impl CorpusCorrelation {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["item", "fraction_female", "mean_logit", "fitted_logit", "slope", "intercept"])?;
        for p in &self.points {
            w.write_record([
                p.item.clone(),
                p.fraction_female.to_string(),
                p.mean_logit.to_string(),
                p.fitted_logit.to_string(),
                self.slope.to_string(),
                self.intercept.to_string(),
            ])?;
        }
        finish_csv(w)
    }
}

/// Pearson correlation of corpus female fractions with mean gender logits.
pub fn correlate_corpus_vs_probe(fractions: &BTreeMap<String, f64>, scales: &[ItemScale]) -> Result<CorpusCorrelation> {
    let mut points: Vec<CorpusPoint> = scales
        .iter()
        .filter_map(|s| {
            let f = *fractions.get(&s.item_id)?;
            Some(CorpusPoint { item: s.item_id.clone(), fraction_female: f, mean_logit: s.mean(Axis::Gender)?, fitted_logit: 0.0 })
        })
        .collect();
    if points.len() < 3 {
        return Err(domain(format!("need at least 3 items shared between corpus fractions and scales, got {}", points.len())));
    }
    points.sort_by(|a, b| a.item.cmp(&b.item));
    let x: Vec<f64> = points.iter().map(|p| p.fraction_female).collect();
    let y: Vec<f64> = points.iter().map(|p| p.mean_logit).collect();
    let result = pearson(&x, &y)?;
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    for p in &mut points {
        p.fitted_logit = intercept + slope * p.fraction_female;
    }
    Ok(CorpusCorrelation { result, slope, intercept, points })
}
