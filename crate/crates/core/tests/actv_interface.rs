//! The contract an external capture tool has to meet: records built from
//! generated prompts, written as .actv, read back and validated.

use demoscope::activation_store::{read_dataset, validate_dataset, ActivationDataset, ActivationRecord, Axis};
use demoscope::prompt_forge::{gen_explicit_corpus, gen_item_prompts, builtin_items, TemplateBank};
use demoscope::util::rng;
use rand::Rng;

fn capture(layers: usize, dim: usize) -> ActivationDataset {
    let bank = TemplateBank::builtin();
    let mut prompts = gen_explicit_corpus(&bank, 48, 2).unwrap();
    prompts.extend(gen_item_prompts(&bank, &builtin_items()[..4], 3, 2).unwrap());
    let mut r = rng(8);
    let mut ds = ActivationDataset::new("tiny-checkpoint", layers, dim);
    ds.provenance = Some("post-block residual, last prompt token".into());
    for p in prompts {
        ds.records.push(ActivationRecord {
            prompt_id: p.prompt_id,
            turn_index: p.turn_index,
            language_code: p.language_code,
            cue_kind: p.cue_kind,
            item_id: p.item_id,
            labels: p.labels,
            vectors: (0..layers).map(|_| (0..dim).map(|_| r.random_range(-3.0f32..3.0)).collect()).collect(),
        });
    }
    ds
}

#[test]
fn captured_prompts_round_trip_and_validate() {
    let ds = capture(3, 12);
    assert!(validate_dataset(&ds).is_empty());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("capture.actv");
    std::fs::write(&p, demoscope::activation_store::encode(&ds).unwrap()).unwrap();
    let back = read_dataset(&p).unwrap();
    assert_eq!(back, ds);
    let (idx, y) = back.eligible(Axis::Gender);
    assert_eq!(idx.len(), 48);
    assert_eq!(y.iter().filter(|&&t| t == 1).count(), 24);
}

#[test]
fn violations_name_record_and_field() {
    let mut ds = capture(2, 4);
    ds.records[0].language_code = "english".into();
    ds.records[1].item_id = Some("stray".into());
    ds.records[2].vectors[1].pop();
    let dup = ds.records[3].clone();
    ds.records.push(dup);
    let v = validate_dataset(&ds);
    let fields: Vec<(Option<usize>, &str)> = v.iter().map(|v| (v.record_index, v.field.as_str())).collect();
    assert!(fields.contains(&(Some(0), "language_code")), "{fields:?}");
    assert!(fields.contains(&(Some(1), "item_id")), "{fields:?}");
    assert!(fields.iter().any(|&(i, f)| i == Some(2) && f.starts_with("vectors")), "{fields:?}");
    assert!(fields.contains(&(Some(ds.records.len() - 1), "prompt_id")), "{fields:?}");
    assert!(v[0].to_string().starts_with("record #0 ("));
}
