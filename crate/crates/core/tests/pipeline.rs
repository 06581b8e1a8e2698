//! The library loop end to end: generate, load, train, persist, rank, then
//! feed expert verdicts back into the ground truth.

use chrono::Utc;
use wayfinder_core::corpus::{
    append_annotation, apply_annotations, load_annotation_log, load_manifest, partition, AnnotationRecord, Century,
    Verdict,
};
use wayfinder_core::dataset::{reference_table, LabeledSet};
use wayfinder_core::discover::{discovery_report, export_queue, read_queue, score_candidates};
use wayfinder_core::features::FeatureConfig;
use wayfinder_core::models::{Model, Registry};
use wayfinder_core::synth::{generate, SynthConfig};

fn small_config() -> SynthConfig {
    SynthConfig {
        docs_per_class: 25,
        doc_length: 400,
        candidates: 80,
        planted_positives: 10,
        seed: 9,
        ..SynthConfig::default()
    }
}

#[test]
fn every_family_survives_a_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&small_config()).unwrap();
    let manifest = corpus.write(dir.path()).unwrap();
    let p = partition(&load_manifest(&manifest).unwrap(), Century::C18);
    let freq = reference_table(&p).unwrap();
    let set = LabeledSet::from_partition(&p).unwrap();
    let registry = Registry::builtin();

    for name in registry.names() {
        let family = registry.get(name).unwrap();
        let features = FeatureConfig::for_profile(family.profile());
        let xs = set.vectorize(&freq, &features);
        let classifier = family.train(&xs, &set.labels, &family.default_config()).unwrap();
        let model = Model::new(family.as_ref(), classifier, features, freq.fingerprint(), "run").unwrap();

        let path = dir.path().join(format!("{name}.model"));
        model.save(&path).unwrap();
        let back = Model::load(&path, &registry).unwrap();
        assert_eq!(back.to_bytes(), model.to_bytes(), "{name}");
        for x in &xs {
            assert_eq!(
                back.predict_score(x).unwrap().score,
                model.predict_score(x).unwrap().score,
                "{name}"
            );
        }

        // Ranking does not depend on how many workers score the pool.
        let one = score_candidates(&model, &p.candidates, &freq, 1).unwrap();
        let three = score_candidates(&model, &p.candidates, &freq, 3).unwrap();
        assert_eq!(one, three, "{name}");
        assert_eq!(one.ranked.len(), p.candidates.len());
    }
}

#[test]
fn confirmed_candidates_join_the_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&small_config()).unwrap();
    let planted: Vec<String> = corpus.planted().iter().map(|s| s.to_string()).collect();
    let manifest = corpus.write(dir.path()).unwrap();
    let p = partition(&load_manifest(&manifest).unwrap(), Century::C18);
    let freq = reference_table(&p).unwrap();
    let set = LabeledSet::from_partition(&p).unwrap();

    let registry = Registry::builtin();
    let family = registry.get("svm").unwrap();
    let features = FeatureConfig::for_profile(family.profile());
    let classifier = family
        .train(&set.vectorize(&freq, &features), &set.labels, &family.default_config())
        .unwrap();
    let model = Model::new(family.as_ref(), classifier, features, freq.fingerprint(), "run").unwrap();
    let ranking = score_candidates(&model, &p.candidates, &freq, 2).unwrap();

    let mut csv = Vec::new();
    assert_eq!(export_queue(&ranking.ranked, 20, &mut csv).unwrap(), 20);
    let queue = read_queue(csv.as_slice()).unwrap();

    // An expert confirms the planted positives among the top 20 and rejects the rest.
    let log = dir.path().join("verdicts.jsonl");
    for c in &queue {
        let verdict = if planted.contains(&c.doc_id) {
            Verdict::Confirm
        } else {
            Verdict::Reject
        };
        let record = AnnotationRecord {
            doc_id: c.doc_id.clone(),
            verdict,
            annotator: "expert".into(),
            timestamp: Utc::now(),
            round: 1,
        };
        append_annotation(&log, &record).unwrap();
    }
    let records = load_annotation_log(&log).unwrap();
    let report = discovery_report(&queue, &records).unwrap();
    let confirmed = queue.iter().filter(|c| planted.contains(&c.doc_id)).count();
    assert_eq!(report.confirmed, confirmed);
    assert_eq!(report.evaluated_top_n, 20);

    let grown = apply_annotations(p.clone(), &records).unwrap();
    assert_eq!(grown.positives.len(), p.positives.len() + confirmed);
    assert_eq!(grown.negatives.len(), p.negatives.len() + 20 - confirmed);
    assert_eq!(grown.candidates.len(), p.candidates.len() - 20);
}
