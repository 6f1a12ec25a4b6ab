use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::activation_store::Axis;
use crate::error::{domain, Result};

/// Published summary of human ratings on one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSummary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyItem {
    pub item_id: String,
    pub category: String,
    pub axes: BTreeMap<Axis, AxisSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided Welch t-test reconstructed from summary statistics.
pub fn welch_t(a: &AxisSummary, b: &AxisSummary) -> Result<WelchResult> {
    if a.n < 2 || b.n < 2 {
        return Err(domain("Welch's t needs at least 2 respondents per item"));
    }
    if !(a.sd >= 0.0 && b.sd >= 0.0) || !a.mean.is_finite() || !b.mean.is_finite() {
        return Err(domain("survey summaries must have finite means and non-negative sd"));
    }
    let (va, vb) = (a.sd * a.sd / a.n as f64, b.sd * b.sd / b.n as f64);
    let diff = a.mean - b.mean;
    let se2 = va + vb;
    if se2 == 0.0 {
        let (t, p) = if diff == 0.0 { (0.0, 1.0) } else { (diff.signum() * f64::INFINITY, 0.0) };
        return Ok(WelchResult { t, df: (a.n + b.n - 2) as f64, p_value: p });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.n as f64 - 1.0) + vb * vb / (b.n as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| domain(format!("invalid Welch df {df}: {e}")))?;
    Ok(WelchResult { t, df, p_value: (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0) })
}

fn summary(item: &SurveyItem, axis: Axis) -> Result<&AxisSummary> {
    item.axes.get(&axis).ok_or_else(|| domain(format!("survey item {} has no {axis} rating", item.item_id)))
}

pub fn welch_t_significant(a: &SurveyItem, b: &SurveyItem, axis: Axis, alpha: f64) -> Result<bool> {
    Ok(welch_t(summary(a, axis)?, summary(b, axis)?)?.p_value < alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    pub percent: f64,
    pub pairs_used: usize,
    pub agreeing: usize,
}

/// Share of significantly different survey pairs that the model orders the
/// same way. Model ties count as disagreement.
pub fn pairwise_agreement(
    model_scores: &BTreeMap<String, f64>,
    survey: &[SurveyItem],
    axis: Axis,
    alpha: f64,
) -> Result<Agreement> {
    let c = agreement_counts(model_scores, survey, axis, alpha)?;
    if c.shared < 2 {
        return Err(domain(format!("need at least 2 items shared with the survey on {axis}, got {}", c.shared)));
    }
    if c.used == 0 {
        return Err(domain(format!("no significantly different survey pairs on {axis}")));
    }
    Ok(Agreement { percent: 100.0 * c.agreeing as f64 / c.used as f64, pairs_used: c.used, agreeing: c.agreeing })
}

pub(crate) struct AgreementCounts {
    pub shared: usize,
    pub used: usize,
    pub agreeing: usize,
}

pub(crate) fn agreement_counts(
    model_scores: &BTreeMap<String, f64>,
    survey: &[SurveyItem],
    axis: Axis,
    alpha: f64,
) -> Result<AgreementCounts> {
    let shared: Vec<(&SurveyItem, f64)> = survey
        .iter()
        .filter(|s| s.axes.contains_key(&axis))
        .filter_map(|s| model_scores.get(&s.item_id).map(|&m| (s, m)))
        .collect();
    let (mut used, mut agreeing) = (0usize, 0usize);
    for i in 0..shared.len() {
        for j in i + 1..shared.len() {
            let (a, ma) = shared[i];
            let (b, mb) = shared[j];
            if !welch_t_significant(a, b, axis, alpha)? {
                continue;
            }
            used += 1;
            let sd = summary(a, axis)?.mean - summary(b, axis)?.mean;
            let md = ma - mb;
            if md != 0.0 && md.signum() == sd.signum() {
                agreeing += 1;
            }
        }
    }
    Ok(AgreementCounts { shared: shared.len(), used, agreeing })
}

#[derive(Debug, Deserialize)]
struct SurveyRow {
    item: String,
    category: String,
    axis: Axis,
    mean: f64,
    sd: f64,
    n: usize,
}

/// Reads the long-format survey CSV (`item,category,axis,mean,sd,n`).
/// Items keep first-appearance order.
pub fn read_survey_csv(r: impl Read) -> Result<Vec<SurveyItem>> {
    let mut items: Vec<SurveyItem> = Vec::new();
    let mut pos: BTreeMap<String, usize> = BTreeMap::new();
    for row in crate::util::csv_reader(r).deserialize::<SurveyRow>() {
        let row = row?;
        if row.n < 2 || !(row.sd >= 0.0) || !row.mean.is_finite() {
            return Err(domain(format!("survey item {}: need n >= 2, sd >= 0 and a finite mean", row.item)));
        }
        let idx = *pos.entry(row.item.clone()).or_insert_with(|| {
            items.push(SurveyItem { item_id: row.item.clone(), category: row.category.clone(), axes: BTreeMap::new() });
            items.len() - 1
        });
        if items[idx].category != row.category {
            return Err(domain(format!("survey item {} appears under two categories", row.item)));
        }
        if items[idx].axes.insert(row.axis, AxisSummary { mean: row.mean, sd: row.sd, n: row.n }).is_some() {
            return Err(domain(format!("survey item {} has two {} rows", row.item, row.axis)));
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlsRow {
    pub occupation: String,
    pub fraction_women: f64,
    pub median_hourly_wage_usd: f64,
}

pub fn read_bls_csv(r: impl Read) -> Result<Vec<BlsRow>> {
    let mut out = Vec::new();
    for row in crate::util::csv_reader(r).deserialize::<BlsRow>() {
        let row = row?;
        if !(0.0..=1.0).contains(&row.fraction_women) {
            return Err(domain(format!("{}: fraction_women must lie in [0, 1]", row.occupation)));
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NameKind {
    First,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CensusCategory {
    Male,
    Female,
    Black,
    White,
}

impl CensusCategory {
    /// Axis and binary target of the category.
    pub fn target(self) -> (Axis, u8) {
        match self {
            CensusCategory::Male => (Axis::Gender, 0),
            CensusCategory::Female => (Axis::Gender, 1),
            CensusCategory::Black => (Axis::Race, 0),
            CensusCategory::White => (Axis::Race, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub name: String,
    pub kind: NameKind,
    pub category: CensusCategory,
    pub rank: u32,
}

pub fn read_census_csv(r: impl Read) -> Result<Vec<CensusRow>> {
    crate::util::csv_reader(r).deserialize::<CensusRow>().map(|row| Ok(row?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, mean: f64, sd: f64, n: usize) -> SurveyItem {
        SurveyItem {
            item_id: id.into(),
            category: "food".into(),
            axes: [(Axis::Gender, AxisSummary { mean, sd, n })].into_iter().collect(),
        }
    }

    fn scores(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn welch_cases() {
        let a = item("a", 0.0, 0.1, 50);
        assert!(!welch_t_significant(&a, &a, Axis::Gender, 0.01).unwrap());
        let b = item("b", 1.0, 0.1, 50);
        let w = welch_t(&a.axes[&Axis::Gender], &b.axes[&Axis::Gender]).unwrap();
        assert!((w.t + 50.0).abs() < 1e-9);
        assert!((w.df - 98.0).abs() < 1e-9);
        assert!(welch_t_significant(&a, &b, Axis::Gender, 0.01).unwrap());
        let c = item("c", 0.0, 1.0, 10);
        let d = item("d", 0.05, 1.0, 10);
        let w = welch_t(&c.axes[&Axis::Gender], &d.axes[&Axis::Gender]).unwrap();
        assert!((w.t.abs() - 0.05 / (0.2f64).sqrt()).abs() < 1e-12);
        assert!(!welch_t_significant(&c, &d, Axis::Gender, 0.01).unwrap());
        let z1 = item("z", 1.0, 0.0, 5);
        let z2 = item("y", 1.0, 0.0, 5);
        assert_eq!(welch_t(&z1.axes[&Axis::Gender], &z2.axes[&Axis::Gender]).unwrap().p_value, 1.0);
        assert!(welch_t_significant(&z1, &item("x", 2.0, 0.0, 5), Axis::Gender, 0.01).unwrap());
        assert!(welch_t_significant(&item("w", 0.0, 1.0, 1), &a, Axis::Gender, 0.01).is_err());
    }

    #[test]
    fn agreement_endpoints_and_hand_case() {
        let survey = vec![item("a", 0.0, 0.1, 50), item("b", 1.0, 0.1, 50), item("c", 2.0, 0.1, 50)];
        let same = pairwise_agreement(&scores(&[("a", 0.0), ("b", 1.0), ("c", 2.0)]), &survey, Axis::Gender, 0.01).unwrap();
        assert_eq!((same.percent, same.pairs_used), (100.0, 3));
        let rev = pairwise_agreement(&scores(&[("a", 2.0), ("b", 1.0), ("c", 0.0)]), &survey, Axis::Gender, 0.01).unwrap();
        assert_eq!(rev.percent, 0.0);
        let mixed = pairwise_agreement(&scores(&[("a", 0.0), ("b", 2.0), ("c", 1.0)]), &survey, Axis::Gender, 0.01).unwrap();
        assert!((mixed.percent - 200.0 / 3.0).abs() < 1e-9);
        let tie = pairwise_agreement(&scores(&[("a", 0.0), ("b", 0.0), ("c", 1.0)]), &survey, Axis::Gender, 0.01).unwrap();
        assert_eq!(tie.agreeing, 2);
    }

    #[test]
    fn agreement_errors() {
        let survey = vec![item("a", 0.0, 1.0, 10), item("b", 0.05, 1.0, 10)];
        assert!(pairwise_agreement(&scores(&[("a", 0.0), ("b", 1.0)]), &survey, Axis::Gender, 0.01).is_err());
        assert!(pairwise_agreement(&scores(&[("a", 0.0)]), &survey, Axis::Gender, 0.01).is_err());
    }

    #[test]
    fn negated_scores_complement() {
        let survey: Vec<SurveyItem> = (0..6).map(|i| item(&format!("i{i}"), i as f64 * 0.3, 0.2, 30)).collect();
        let s = scores(&[("i0", 0.4), ("i1", -1.0), ("i2", 2.0), ("i3", 0.1), ("i4", 3.0), ("i5", 1.5)]);
        let neg: BTreeMap<String, f64> = s.iter().map(|(k, v)| (k.clone(), -v)).collect();
        let a = pairwise_agreement(&s, &survey, Axis::Gender, 0.01).unwrap();
        let b = pairwise_agreement(&neg, &survey, Axis::Gender, 0.01).unwrap();
        assert!((a.percent + b.percent - 100.0).abs() < 1e-9);
    }

    #[test]
    fn csv_readers() {
        let s = "item,category,axis,mean,sd,n\nsteak,food,gender,-0.5,1.1,40\nsteak,food,class,0.2,0.9,40\nsalad,food,gender,0.6,1.0,38\n";
        let items = read_survey_csv(s.as_bytes()).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].axes.len(), 2);
        assert!(read_survey_csv("item,category,axis,mean,sd,n\nx,food,gender,0,1,1\n".as_bytes()).is_err());
        let b = read_bls_csv("occupation,fraction_women,median_hourly_wage_usd\nnurse,0.87,39.1\n".as_bytes()).unwrap();
        assert_eq!(b[0].fraction_women, 0.87);
        assert!(read_bls_csv("occupation,fraction_women,median_hourly_wage_usd\nnurse,87,39.1\n".as_bytes()).is_err());
        let c = read_census_csv("name,kind,category,rank\nMary,first,female,1\nWashington,last,black,3\n".as_bytes()).unwrap();
        assert_eq!(c[1].category.target(), (Axis::Race, 0));
    }
}
