//! Per-item demographic scales from probe logits, and their comparison with
//! census, labor and survey statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation_store::{ActivationDataset, Axis};
use crate::error::{domain, Result};
use crate::probe_lab::{auc_roc, finish_csv, LinearProbe};
use crate::stat_lab::{
    agreement_counts, isotonic_fit_xy, spearman, Agreement, BlsRow, CensusRow, CorrelationResult, NameKind,
    SurveyItem,
};
use crate::util::{fmt_f, mean_sd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisScale {
    pub mean_logit: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScale {
    pub item_id: String,
    pub category: String,
    pub axes: BTreeMap<Axis, AxisScale>,
}

impl ItemScale {
    pub fn mean(&self, axis: Axis) -> Option<f64> {
        self.axes.get(&axis).map(|a| a.mean_logit)
    }
}

/// Mean and population sd of each probe's raw logit over every prompt of an
/// item. Items are taken from records with an item cue; `categories` maps
/// item ids to their category, falling back to the cue kind name.
pub fn scale_items(
    ds: &ActivationDataset,
    probes: &[LinearProbe],
    categories: &BTreeMap<String, String>,
) -> Result<Vec<ItemScale>> {
    if probes.is_empty() {
        return Err(domain("no probes to scale items with"));
    }
    for p in probes {
        if p.layer_index >= ds.layer_count {
            return Err(domain(format!(
                "{} probe layer {} is not in the dataset ({} layers)",
                p.attribute_axis, p.layer_index, ds.layer_count
            )));
        }
    }
    let mut groups: BTreeMap<&str, (String, Vec<usize>)> = BTreeMap::new();
    for (i, r) in ds.records.iter().enumerate() {
        if let (true, Some(id)) = (r.cue_kind.is_item(), r.item_id.as_deref()) {
            let cat = categories.get(id).cloned().unwrap_or_else(|| r.cue_kind.as_str().to_string());
            groups.entry(id).or_insert_with(|| (cat, Vec::new())).1.push(i);
        }
    }
    if groups.is_empty() {
        return Err(domain("dataset has no item-cue records"));
    }
    groups
        .into_par_iter()
        .map(|(id, (category, idx))| {
            let mut axes = BTreeMap::new();
            for p in probes {
                let mut logits = idx.iter().map(|&i| p.score_record(ds, i)).collect::<Result<Vec<f64>>>()?;
                // Sorting makes the floating-point sum independent of record order.
                logits.sort_by(f64::total_cmp);
                let (mean_logit, sd) = mean_sd(&logits);
                axes.insert(p.attribute_axis, AxisScale { mean_logit, sd, n: logits.len() });
            }
            Ok(ItemScale { item_id: id.to_string(), category, axes })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ScaleRow {
    item: String,
    category: String,
    axis: Axis,
    mean_logit: f64,
    sd: f64,
    n: usize,
}

pub fn scales_to_csv(scales: &[ItemScale]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in scales {
        for (&axis, a) in &s.axes {
            w.serialize(ScaleRow {
                item: s.item_id.clone(),
                category: s.category.clone(),
                axis,
                mean_logit: a.mean_logit,
                sd: a.sd,
                n: a.n,
            })?;
        }
    }
    finish_csv(w)
}

pub fn read_scales_csv(r: impl Read) -> Result<Vec<ItemScale>> {
    let mut out: Vec<ItemScale> = Vec::new();
    let mut pos: BTreeMap<String, usize> = BTreeMap::new();
    for row in crate::util::csv_reader(r).deserialize::<ScaleRow>() {
        let row = row?;
        if row.n == 0 || !(row.sd >= 0.0) {
            return Err(domain(format!("scale row for {}: need n >= 1 and sd >= 0", row.item)));
        }
        let i = *pos.entry(row.item.clone()).or_insert_with(|| {
            out.push(ItemScale { item_id: row.item.clone(), category: row.category.clone(), axes: BTreeMap::new() });
            out.len() - 1
        });
        if out[i].category != row.category {
            return Err(domain(format!("item {} appears under two categories", row.item)));
        }
        let a = AxisScale { mean_logit: row.mean_logit, sd: row.sd, n: row.n };
        if out[i].axes.insert(row.axis, a).is_some() {
            return Err(domain(format!("item {} has two {} rows", row.item, row.axis)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub item: String,
    pub axis: Axis,
    pub x_stat: f64,
    pub mean_logit: f64,
    pub isotonic_fit: f64,
}

/// Scatter points sorted by `x_stat` with the non-decreasing least-squares
/// fit of `mean_logit` on `x_stat`.
pub fn scatter(axis: Axis, points: &[(String, f64, f64)]) -> Result<Vec<ScatterPoint>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let x: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let fit = isotonic_fit_xy(&x, &y)?;
    Ok(pts
        .into_iter()
        .zip(fit)
        .map(|((item, x_stat, mean_logit), isotonic_fit)| ScatterPoint { item, axis, x_stat, mean_logit, isotonic_fit })
        .collect())
}

pub fn scatter_to_csv(points: &[ScatterPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    finish_csv(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupationCorrelation {
    /// Mean gender logit against the fraction of women employed.
    pub gender: CorrelationResult,
    /// Mean class logit against the median hourly wage.
    pub class: CorrelationResult,
    pub scatter: Vec<ScatterPoint>,
}

/// Spearman correlations between occupation scales and labor statistics.
/// Occupations are matched on exact item id.
pub fn correlate_occupations(scales: &[ItemScale], bls: &[BlsRow]) -> Result<OccupationCorrelation> {
    let by_id: BTreeMap<&str, &ItemScale> = scales.iter().map(|s| (s.item_id.as_str(), s)).collect();
    let pair = |axis: Axis, stat: fn(&BlsRow) -> f64| -> Result<(CorrelationResult, Vec<ScatterPoint>)> {
        let pts: Vec<(String, f64, f64)> = bls
            .iter()
            .filter_map(|b| by_id.get(b.occupation.as_str()).and_then(|s| s.mean(axis)).map(|m| (b.occupation.clone(), stat(b), m)))
            .collect();
        if pts.len() < 3 {
            return Err(domain(format!("need at least 3 occupations shared with the labor statistics on {axis}, got {}", pts.len())));
        }
        let x: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        Ok((spearman(&x, &y)?, scatter(axis, &pts)?))
    };
    let (gender, mut pts) = pair(Axis::Gender, |b| b.fraction_women)?;
    let (class, class_pts) = pair(Axis::Class, |b| b.median_hourly_wage_usd)?;
    pts.extend(class_pts);
    Ok(OccupationCorrelation { gender, class, scatter: pts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NameAuc {
    pub auc: f64,
    pub n: usize,
}

/// AUC of item mean logits against census-predominant categories: gender
/// from first names, race from last names. Names match item ids
/// case-insensitively.
pub fn name_probe_auc(scales: &[ItemScale], census: &[CensusRow]) -> Result<BTreeMap<Axis, NameAuc>> {
    let by_id: BTreeMap<String, &ItemScale> = scales.iter().map(|s| (s.item_id.to_lowercase(), s)).collect();
    let mut per_axis: BTreeMap<Axis, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for row in census {
        let (axis, target) = row.category.target();
        let expected = match axis {
            Axis::Gender => NameKind::First,
            _ => NameKind::Last,
        };
        if row.kind != expected {
            return Err(domain(format!("census name {} is a {:?} name but labeled {:?}", row.name, row.kind, row.category)));
        }
        if let Some(m) = by_id.get(&row.name.to_lowercase()).and_then(|s| s.mean(axis)) {
            let e = per_axis.entry(axis).or_default();
            e.0.push(m);
            e.1.push(target);
        }
    }
    if per_axis.is_empty() {
        return Err(domain("no census names match a scaled item"));
    }
    per_axis
        .into_iter()
        .map(|(axis, (scores, targets))| {
            if targets.iter().all(|&t| t == targets[0]) {
                return Err(domain(format!("names on {axis} cover a single census category")));
            }
            Ok((axis, NameAuc { auc: auc_roc(&scores, &targets)?, n: scores.len() }))
        })
        .collect()
}

/// Category columns in display order; unknown categories follow
/// alphabetically.
pub const CATEGORY_ORDER: [&str; 7] = ["vehicle", "music", "sport", "food", "clothes", "name", "occupation"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementCell {
    pub category: String,
    pub axis: Axis,
    /// `None` when the category has no significantly different pair.
    pub agreement: Option<Agreement>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementTable {
    pub categories: Vec<String>,
    pub cells: Vec<AgreementCell>,
}

impl AgreementTable {
    pub fn cell(&self, category: &str, axis: Axis) -> Option<&AgreementCell> {
        self.cells.iter().find(|c| c.category == category && c.axis == axis)
    }

    /// Agreement over every category's pairs pooled.
    pub fn pooled(&self, axes: &[Axis]) -> Option<Agreement> {
        let (mut used, mut agreeing) = (0, 0);
        for c in self.cells.iter().filter(|c| axes.contains(&c.axis)) {
            if let Some(a) = &c.agreement {
                used += a.pairs_used;
                agreeing += a.agreeing;
            }
        }
        (used > 0).then(|| Agreement { percent: 100.0 * agreeing as f64 / used as f64, pairs_used: used, agreeing })
    }

    /// Long format: one row per category and axis.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category", "axis", "percent", "pairs_used", "agreeing"])?;
        for c in &self.cells {
            let (p, u, a) = match &c.agreement {
                Some(a) => (fmt_f(a.percent, 1), a.pairs_used.to_string(), a.agreeing.to_string()),
                None => ("NA".into(), "0".into(), "0".into()),
            };
            w.write_record([c.category.as_str(), c.axis.as_str(), &p, &u, &a])?;
        }
        finish_csv(w)
    }

    /// Axes as rows, categories as columns, cells like `94.1 (n=17)`.
    pub fn to_wide_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["axis".to_string()];
        header.extend(self.categories.iter().cloned());
        w.write_record(&header)?;
        for axis in Axis::ALL {
            let mut row = vec![axis.as_str().to_string()];
            for cat in &self.categories {
                row.push(match self.cell(cat, axis).and_then(|c| c.agreement.as_ref()) {
                    Some(a) => format!("{} (n={})", fmt_f(a.percent, 1), a.pairs_used),
                    None => "absent".into(),
                });
            }
            w.write_record(&row)?;
        }
        finish_csv(w)
    }
}

/// Pairwise ordering agreement with survey means per category and axis,
/// counting only pairs whose survey means differ under Welch's t at `alpha`.
pub fn survey_agreement_table(scales: &[ItemScale], survey: &[SurveyItem], alpha: f64) -> Result<AgreementTable> {
    let cats: BTreeSet<&str> = survey.iter().map(|s| s.category.as_str()).collect();
    let mut categories: Vec<String> =
        CATEGORY_ORDER.iter().filter(|c| cats.contains(*c)).map(|c| c.to_string()).collect();
    categories.extend(cats.iter().filter(|c| !CATEGORY_ORDER.contains(c)).map(|c| c.to_string()));
    let mut cells = Vec::new();
    for cat in &categories {
        let items: Vec<SurveyItem> = survey.iter().filter(|s| &s.category == cat).cloned().collect();
        for axis in Axis::ALL {
            let scores: BTreeMap<String, f64> =
                scales.iter().filter_map(|s| s.mean(axis).map(|m| (s.item_id.clone(), m))).collect();
            let c = agreement_counts(&scores, &items, axis, alpha)?;
            let agreement = (c.used > 0).then(|| Agreement {
                percent: 100.0 * c.agreeing as f64 / c.used as f64,
                pairs_used: c.used,
                agreeing: c.agreeing,
            });
            cells.push(AgreementCell { category: cat.clone(), axis, agreement });
        }
    }
    Ok(AgreementTable { categories, cells })
}

/// Items of each category in ascending order of mean logit on `axis`, ties
/// broken by item id. Items without that axis are skipped.
pub fn rank_items(scales: &[ItemScale], axis: Axis) -> BTreeMap<String, Vec<(String, f64)>> {
    let mut out: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for s in scales {
        if let Some(m) = s.mean(axis) {
            out.entry(s.category.clone()).or_default().push((s.item_id.clone(), m));
        }
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation_store::CueKind;
    use crate::probe_lab::fit_probe;
    use crate::stat_lab::{AxisSummary, CensusCategory};
    use crate::steer_engine::{planted_items, planted_synthetic, PlantedItem, PlantedSpec};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn scale(id: &str, cat: &str, vals: &[(Axis, f64)]) -> ItemScale {
        ItemScale {
            item_id: id.into(),
            category: cat.into(),
            axes: vals.iter().map(|&(a, m)| (a, AxisScale { mean_logit: m, sd: 0.0, n: 1 })).collect(),
        }
    }

    fn planted_setup(items: &[PlantedItem], per_item: usize) -> (ActivationDataset, Vec<LinearProbe>) {
        let spec = PlantedSpec { dim: 32, layer_count: 3, signal_layers: vec![1], n_per_class: 200, other_axes_effect: 5.0, ..PlantedSpec::default() };
        let oracle = planted_synthetic(&spec, 3).unwrap();
        let probes = Axis::ALL.iter().map(|&a| fit_probe(&oracle.dataset, 1, a, 0.01).unwrap()).collect();
        (planted_items(&spec, &oracle, items, per_item, 4).unwrap(), probes)
    }

    fn item(id: &str, offsets: &[(Axis, f64)]) -> PlantedItem {
        PlantedItem { item_id: id.into(), cue_kind: CueKind::CulturalItem, offsets: offsets.iter().copied().collect() }
    }

    #[test]
    fn planted_items_order_on_axis() {
        let items = [item("a", &[(Axis::Gender, 2.0)]), item("b", &[(Axis::Gender, -2.0)]), item("c", &[(Axis::Gender, 0.0)])];
        let (ds, probes) = planted_setup(&items, 20);
        let cats = BTreeMap::from([("a".to_string(), "sport".to_string())]);
        let scales = scale_items(&ds, &probes, &cats).unwrap();
        assert_eq!(scales.len(), 3);
        assert_eq!(scales[0].category, "sport");
        assert_eq!(scales[1].category, "cultural_item");
        assert!(scales[0].mean(Axis::Gender).unwrap() > scales[1].mean(Axis::Gender).unwrap());
        assert!(scales.iter().all(|s| s.axes.values().all(|a| a.n == 20 && a.sd >= 0.0)));
        let ranked: Vec<String> =
            rank_items(&scales, Axis::Gender).into_values().flat_map(|v| v.into_iter().map(|(id, _)| id)).collect();
        assert_eq!(ranked, ["b", "c", "a"]);
    }

    #[test]
    fn single_and_duplicated_prompts() {
        let items = [item("a", &[(Axis::Race, 1.0)])];
        let (mut ds, probes) = planted_setup(&items, 1);
        let one = scale_items(&ds, &probes, &BTreeMap::new()).unwrap();
        let a = one[0].axes[&Axis::Race];
        assert_eq!(a.mean_logit, probes[1].score_record(&ds, 0).unwrap());
        assert_eq!((a.sd, a.n), (0.0, 1));
        let copy = ds.records[0].clone();
        ds.records.extend([copy.clone(), copy]);
        let three = scale_items(&ds, &probes, &BTreeMap::new()).unwrap()[0].axes[&Axis::Race];
        assert!((three.mean_logit - a.mean_logit).abs() < 1e-12 && three.sd < 1e-12);
        assert_eq!(three.n, 3);
    }

    #[test]
    fn missing_layer_is_an_error() {
        let (ds, mut probes) = planted_setup(&[item("a", &[])], 2);
        probes[0].layer_index = 7;
        assert!(scale_items(&ds, &probes, &BTreeMap::new()).unwrap_err().to_string().contains("layer 7"));
    }

    #[test]
    fn order_invariance() {
        let items = [item("a", &[(Axis::Class, 1.0)]), item("b", &[])];
        let (mut ds, probes) = planted_setup(&items, 15);
        let before = scale_items(&ds, &probes, &BTreeMap::new()).unwrap();
        ds.records.shuffle(&mut crate::util::rng(1));
        assert_eq!(scale_items(&ds, &probes, &BTreeMap::new()).unwrap(), before);
    }

    #[test]
    fn scales_csv_round_trip() {
        let s = vec![scale("nurse", "occupation", &[(Axis::Gender, 1.5), (Axis::Class, -0.25)])];
        let csv = scales_to_csv(&s).unwrap();
        assert!(csv.starts_with("item,category,axis,mean_logit,sd,n\n"));
        assert_eq!(read_scales_csv(csv.as_bytes()).unwrap(), s);
        assert!(read_scales_csv("item,category,axis,mean_logit,sd,n\nx,y,gender,0,0,0\n".as_bytes()).is_err());
    }

    fn bls(rows: &[(&str, f64, f64)]) -> Vec<BlsRow> {
        rows.iter()
            .map(|&(o, f, w)| BlsRow { occupation: o.into(), fraction_women: f, median_hourly_wage_usd: w })
            .collect()
    }

    #[test]
    fn occupations_identity_and_rescaling() {
        let stats = bls(&[("a", 0.1, 50.0), ("b", 0.5, 20.0), ("c", 0.9, 30.0), ("d", 0.3, 10.0)]);
        let scales: Vec<ItemScale> = stats
            .iter()
            .map(|b| scale(&b.occupation, "occupation", &[(Axis::Gender, b.fraction_women), (Axis::Class, b.median_hourly_wage_usd)]))
            .collect();
        let r = correlate_occupations(&scales, &stats).unwrap();
        assert!((r.gender.coefficient - 1.0).abs() < 1e-12 && (r.class.coefficient - 1.0).abs() < 1e-12);
        assert_eq!(r.scatter.len(), 8);
        assert!(r.scatter.iter().all(|p| (p.isotonic_fit - p.mean_logit).abs() < 1e-12));
        let squashed: Vec<ItemScale> = scales
            .iter()
            .map(|s| ItemScale {
                axes: s.axes.iter().map(|(&a, v)| (a, AxisScale { mean_logit: (v.mean_logit * 3.0).exp(), ..*v })).collect(),
                ..s.clone()
            })
            .collect();
        assert_eq!(correlate_occupations(&squashed, &stats).unwrap().gender.coefficient, r.gender.coefficient);
        assert!(correlate_occupations(&scales[..2], &stats).is_err());
        let csv = scatter_to_csv(&r.scatter).unwrap();
        assert!(csv.starts_with("item,axis,x_stat,mean_logit,isotonic_fit\n"));
    }

    #[test]
    fn scatter_fit_is_monotone() {
        let pts = vec![("a".into(), 1.0, 3.0), ("b".into(), 2.0, 1.0), ("c".into(), 3.0, 2.0), ("d".into(), 0.0, 0.0)];
        let s = scatter(Axis::Gender, &pts).unwrap();
        assert_eq!(s.iter().map(|p| p.item.as_str()).collect::<Vec<_>>(), ["d", "a", "b", "c"]);
        assert_eq!(s.iter().map(|p| p.isotonic_fit).collect::<Vec<_>>(), [0.0, 2.0, 2.0, 2.0]);
    }

    fn census(name: &str, kind: NameKind, category: CensusCategory) -> CensusRow {
        CensusRow { name: name.into(), kind, category, rank: 1 }
    }

    #[test]
    fn name_auc() {
        let scales = vec![
            scale("emily", "name", &[(Axis::Gender, 2.0)]),
            scale("john", "name", &[(Axis::Gender, -1.0)]),
            scale("washington", "name", &[(Axis::Race, -3.0)]),
            scale("olson", "name", &[(Axis::Race, 1.0)]),
        ];
        let rows = vec![
            census("Emily", NameKind::First, CensusCategory::Female),
            census("John", NameKind::First, CensusCategory::Male),
            census("Washington", NameKind::Last, CensusCategory::Black),
            census("Olson", NameKind::Last, CensusCategory::White),
            census("Unscaled", NameKind::Last, CensusCategory::White),
        ];
        let r = name_probe_auc(&scales, &rows).unwrap();
        assert_eq!(r[&Axis::Gender], NameAuc { auc: 1.0, n: 2 });
        assert_eq!(r[&Axis::Race].auc, 1.0);
        assert!(name_probe_auc(&scales, &rows[..1]).is_err());
        assert!(name_probe_auc(&scales, &[census("Emily", NameKind::Last, CensusCategory::Female)]).is_err());
    }

    #[test]
    fn name_auc_null_band() {
        let mut r = crate::util::rng(12);
        let (mut scales, mut rows) = (Vec::new(), Vec::new());
        for i in 0..100 {
            let id = format!("n{i}");
            scales.push(scale(&id, "name", &[(Axis::Gender, rand::Rng::random::<f64>(&mut r))]));
            let cat = if i < 50 { CensusCategory::Female } else { CensusCategory::Male };
            rows.push(census(&id, NameKind::First, cat));
        }
        let auc = name_probe_auc(&scales, &rows).unwrap()[&Axis::Gender].auc;
        let se = (101.0_f64 / (12.0 * 50.0 * 50.0)).sqrt();
        assert!((auc - 0.5).abs() < 2.576 * se, "{auc}");
    }

    fn survey_item(id: &str, cat: &str, means: &[(Axis, f64)]) -> SurveyItem {
        SurveyItem {
            item_id: id.into(),
            category: cat.into(),
            axes: means.iter().map(|&(a, m)| (a, AxisSummary { mean: m, sd: 1.0, n: 100 })).collect(),
        }
    }

    #[test]
    fn agreement_copied_and_negated() {
        let survey: Vec<SurveyItem> = (0..6)
            .map(|i| survey_item(&format!("f{i}"), "food", &[(Axis::Gender, i as f64), (Axis::Class, -(i as f64))]))
            .collect();
        let copied: Vec<ItemScale> = survey
            .iter()
            .map(|s| ItemScale {
                item_id: s.item_id.clone(),
                category: s.category.clone(),
                axes: s.axes.iter().map(|(&a, v)| (a, AxisScale { mean_logit: v.mean, sd: 0.0, n: 1 })).collect(),
            })
            .collect();
        let t = survey_agreement_table(&copied, &survey, 0.05).unwrap();
        assert_eq!(t.categories, ["food"]);
        assert_eq!(t.cell("food", Axis::Gender).unwrap().agreement.as_ref().unwrap().percent, 100.0);
        assert_eq!(t.cell("food", Axis::Gender).unwrap().agreement.as_ref().unwrap().pairs_used, 15);
        assert!(t.cell("food", Axis::Race).unwrap().agreement.is_none());
        let negated: Vec<ItemScale> = copied
            .iter()
            .map(|s| ItemScale {
                axes: s.axes.iter().map(|(&a, v)| (a, AxisScale { mean_logit: -v.mean_logit, ..*v })).collect(),
                ..s.clone()
            })
            .collect();
        let t = survey_agreement_table(&negated, &survey, 0.05).unwrap();
        assert_eq!(t.pooled(&[Axis::Gender, Axis::Class]).unwrap().percent, 0.0);
        let wide = t.to_wide_csv().unwrap();
        assert_eq!(wide, "axis,food\ngender,0.0 (n=15)\nrace,absent\nclass,0.0 (n=15)\n");
        assert!(t.to_csv().unwrap().contains("food,race,NA,0,0"));
    }

    #[test]
    fn column_order() {
        let survey = vec![
            survey_item("x", "zoo", &[]),
            survey_item("y", "name", &[]),
            survey_item("z", "vehicle", &[]),
        ];
        let t = survey_agreement_table(&[], &survey, 0.05).unwrap();
        assert_eq!(t.categories, ["vehicle", "name", "zoo"]);
    }

    #[test]
    fn rank_ties() {
        let s = vec![scale("b", "c", &[(Axis::Gender, 0.0)]), scale("a", "c", &[(Axis::Gender, 0.0)]), scale("z", "c", &[(Axis::Gender, -1.0)])];
        let r = rank_items(&s, Axis::Gender);
        assert_eq!(r["c"].iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), ["z", "a", "b"]);
        assert!(rank_items(&s, Axis::Race).is_empty());
    }

    fn welch_oracle(a: &AxisSummary, b: &AxisSummary) -> f64 {
        let (va, vb) = (a.sd.powi(2) / a.n as f64, b.sd.powi(2) / b.n as f64);
        if va + vb == 0.0 {
            return if a.mean == b.mean { 1.0 } else { 0.0 };
        }
        let t = (a.mean - b.mean) / (va + vb).sqrt();
        let df = (va + vb).powi(2) / (va.powi(2) / (a.n - 1) as f64 + vb.powi(2) / (b.n - 1) as f64);
        2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t.abs()))
    }

    proptest! {
        #[test]
        fn cells_bounded_and_pairs_counted(
            rows in prop::collection::vec((-3.0f64..3.0, 0.1f64..3.0, 2usize..60, -3.0f64..3.0), 2..9)
        ) {
            let survey: Vec<SurveyItem> = rows.iter().enumerate().map(|(i, &(m, sd, n, _))| SurveyItem {
                item_id: format!("i{i}"),
                category: "music".into(),
                axes: BTreeMap::from([(Axis::Race, AxisSummary { mean: m, sd, n })]),
            }).collect();
            let scales: Vec<ItemScale> = rows.iter().enumerate()
                .map(|(i, r)| scale(&format!("i{i}"), "music", &[(Axis::Race, r.3)])).collect();
            let t = survey_agreement_table(&scales, &survey, 0.05).unwrap();
            let mut expected = 0;
            for i in 0..survey.len() {
                for j in i + 1..survey.len() {
                    let (a, b) = (&survey[i].axes[&Axis::Race], &survey[j].axes[&Axis::Race]);
                    let p = welch_oracle(a, b);
                    // Skip draws whose p-value sits on the threshold within rounding.
                    prop_assume!((p - 0.05).abs() > 1e-9);
                    expected += (p < 0.05) as usize;
                }
            }
            let cell = t.cell("music", Axis::Race).unwrap();
            match &cell.agreement {
                Some(a) => {
                    prop_assert!((0.0..=100.0).contains(&a.percent));
                    prop_assert_eq!(a.pairs_used, expected);
                }
                None => prop_assert_eq!(expected, 0),
            }
        }
    }
}
