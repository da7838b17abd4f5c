//! End-to-end pipeline: build a dataset with the template backend, persist it,
//! reload it, and verify the reloaded items still pass the filter chain.

use promptcomp::composer::{template, TemplateBackend};
use promptcomp::corpus::{
    load_composed, load_manifest, manifest_path, save_dataset, CorpusIndex, Status,
};
use promptcomp::dataset::{build_dataset, BuildConfig, CandidateSpec};
use promptcomp::verify::run_filter_chain;
use std::collections::BTreeMap;

#[test]
fn build_save_reload_verify() {
    let corpus = template::generate_corpus(40, 77);
    let mut pools = BTreeMap::new();
    pools.insert("main".to_string(), corpus.clone());
    let backend = TemplateBackend::new();
    let config = BuildConfig {
        name: "pipeline".into(),
        candidate_spec: CandidateSpec::standard(3, "main", 4, 13),
        build_seed: 13,
        run_filters: true,
        include_rejected: false,
        max_items: Some(200),
        checkpoint_path: None,
    };
    let outcome = build_dataset(&config, &pools, &backend).unwrap();
    assert!(outcome.complete);
    assert!(outcome.manifest.entries > 0);
    assert!(outcome.manifest.retention.telescopes());
    assert_eq!(outcome.manifest.depth, 3);
    assert!(outcome
        .dataset
        .iter()
        .all(|item| item.status == Status::Verified));

    // Ground-truth inheritance holds on every persisted item.
    let index = CorpusIndex::from_prompts(&corpus);
    for item in &outcome.dataset {
        let last = index.get(item.seed_ids.last().unwrap()).unwrap();
        assert_eq!(item.ground_truth, last.ground_truth);
        item.validate().unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pipeline.jsonl");
    save_dataset(&outcome.manifest, &outcome.dataset, &path, false).unwrap();
    let reloaded = load_composed(&path).unwrap();
    assert_eq!(reloaded, outcome.dataset);
    let manifest = load_manifest(&manifest_path(&path)).unwrap();
    assert_eq!(manifest, outcome.manifest);

    // Reloaded items re-verify cleanly: the persisted form is lossless.
    let unverified: Vec<_> = reloaded
        .into_iter()
        .map(|mut item| {
            item.status = Status::Unverified;
            item
        })
        .collect();
    let refiltered = run_filter_chain(unverified, &index, &backend);
    assert_eq!(refiltered.kept.len(), outcome.dataset.len());
    assert!(refiltered.rejected.is_empty());
}

#[test]
fn rejected_items_are_excluded_unless_requested() {
    let corpus = template::generate_corpus(12, 31);
    let backend = TemplateBackend::new();
    let composer = promptcomp::composer::Composer::new(&backend);
    let index = CorpusIndex::from_prompts(&corpus);

    let mut items = Vec::new();
    for pair in corpus.chunks(2) {
        let mut item = composer
            .compose2(&pair[0], promptcomp::composer::ComposeTarget::Seed(&pair[1]))
            .unwrap();
        if items.len() % 2 == 1 {
            // Plant a stage-one defect on every other item.
            item.steps[0].v1 = promptcomp::answer::AnswerValue::int(424242);
        }
        items.push(item);
    }
    let outcome = run_filter_chain(items, &index, &backend);
    assert_eq!(outcome.kept.len(), 3);
    assert_eq!(outcome.rejected.len(), 3);

    let manifest = promptcomp::corpus::DatasetManifest {
        name: "mixed".into(),
        entries: outcome.kept.len(),
        depth: 2,
        build_seed: 0,
        candidate_spec: "manual".into(),
        retention: outcome.report.clone(),
        compose_cache_hits: 0,
    };
    let mut everything = outcome.kept.clone();
    everything.extend(outcome.rejected.clone());

    let dir = tempfile::tempdir().unwrap();
    let without = dir.path().join("kept-only.jsonl");
    save_dataset(&manifest, &everything, &without, false).unwrap();
    assert_eq!(load_composed(&without).unwrap().len(), 3);

    let with = dir.path().join("with-rejected.jsonl");
    save_dataset(&manifest, &everything, &with, true).unwrap();
    let loaded = load_composed(&with).unwrap();
    assert_eq!(loaded.len(), 6);
    // Rejected statuses survive the round trip with their stage tags.
    let stages: Vec<u8> = loaded
        .iter()
        .filter_map(|i| match &i.status {
            Status::Rejected { stage, .. } => Some(*stage),
            _ => None,
        })
        .collect();
    assert_eq!(stages, vec![1, 1, 1]);
}
