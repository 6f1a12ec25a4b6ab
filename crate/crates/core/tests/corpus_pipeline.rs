use std::collections::BTreeMap;
use std::io::Write;

use demoscope::activation_store::Axis;
use demoscope::corpus_scan::{
    aggregate_fractions, correlate_corpus_vs_probe, open_corpus, read_annotations_csv, sample_snippets, scan_snippets,
    Keyword,
};
use demoscope::item_scaler::{AxisScale, ItemScale};
use flate2::write::GzEncoder;
use flate2::Compression;

const ITEMS: [(&str, usize); 4] = [("ballet", 9), ("football", 2), ("knitting", 7), ("boxing", 4)];

fn corpus() -> String {
    let mut text = String::new();
    for (item, women) in ITEMS {
        for i in 0..10 {
            let who = if i < women { "She" } else { "He" };
            text.push_str(&format!("{who} spent the weekend on {item} with friends, story {i}.\n"));
        }
    }
    text
}

#[test]
fn gzip_corpus_to_fractions_to_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("corpus.txt.gz");
    let mut gz = GzEncoder::new(std::fs::File::create(&p).unwrap(), Compression::default());
    gz.write_all(corpus().as_bytes()).unwrap();
    gz.finish().unwrap();
    let keywords: Vec<Keyword> = ITEMS.iter().map(|(i, _)| Keyword { item: i.to_string(), form: i.to_string() }).collect();
    let snippets: Vec<_> = scan_snippets(open_corpus(&p).unwrap(), &keywords, 64).unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(snippets.len(), 40);
    let sample = sample_snippets(&snippets, 12, 1).unwrap();
    assert_eq!(sample.snippets.len(), 40);
    assert!(sample.shortfall.len() == 4 && sample.shortfall.values().all(|&s| s == 10));

    let mut csv = String::from("snippet_id,annotator_id,label,basis\n");
    for s in &snippets {
        let label = if s.text.starts_with("She") { "female" } else { "male" };
        csv.push_str(&format!("{},a1,{label},pronoun\n", s.snippet_id));
    }
    let report = aggregate_fractions(&snippets, &read_annotations_csv(csv.as_bytes()).unwrap()).unwrap();
    for (item, women) in ITEMS {
        assert_eq!(report.fractions[item].fraction_female, women as f64 / 10.0);
    }

    let scales: Vec<ItemScale> = ITEMS
        .iter()
        .map(|(item, women)| ItemScale {
            item_id: item.to_string(),
            category: "sport".into(),
            axes: BTreeMap::from([(Axis::Gender, AxisScale { mean_logit: -(*women as f64), sd: 1.0, n: 5 })]),
        })
        .collect();
    let fractions: BTreeMap<String, f64> = report.fractions.iter().map(|(k, v)| (k.clone(), v.fraction_female)).collect();
    let c = correlate_corpus_vs_probe(&fractions, &scales).unwrap();
    assert!((c.result.coefficient + 1.0).abs() < 1e-12, "{}", c.result.coefficient);
}
