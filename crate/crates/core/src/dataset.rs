//! Surrogate dataset construction: candidate sets per seed position, lazy
//! tuple enumeration with the distinctness constraint, the full
//! enumerate→compose→filter build, and the depth curriculum.

use crate::composer::{ComposeBackend, ComposeError, Composer, VerifyBackend};
use crate::corpus::{CorpusIndex, DatasetManifest, Prompt, ComposedPrompt};
use crate::rlvr::BatchReport;
use crate::verify::{run_filter_chain, RetentionReport};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("candidate spec needs at least 2 positions, got {0}")]
    TooFewPositions(usize),
    #[error("position {position} references unknown corpus {corpus:?}")]
    UnknownCorpus { position: usize, corpus: String },
    #[error("RAND({size}) at position {position} exceeds corpus size {available}")]
    SampleTooLarge {
        position: usize,
        size: usize,
        available: usize,
    },
    #[error("RAND size must be at least 1")]
    EmptySample,
    #[error("next-depth dataset for depth {0} is missing; build it first")]
    NextStageDatasetMissing(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// How the candidate set for one seed position is built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "strategy")]
pub enum PositionStrategy {
    Rand { size: usize },
    Full,
}

/// One seed position: a sampling strategy over a named corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePosition {
    #[serde(flatten)]
    pub strategy: PositionStrategy,
    pub corpus: String,
}

/// Candidate construction for all K positions, with the sampling seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub positions: Vec<CandidatePosition>,
    pub rng_seed: u64,
}

impl CandidateSpec {
    /// The default construction: RAND(m) for positions 1..K-1 over one corpus,
    /// FULL for the last.
    pub fn standard(depth: usize, corpus: &str, rand_size: usize, rng_seed: u64) -> Self {
        let mut positions = Vec::with_capacity(depth);
        for _ in 0..depth.saturating_sub(1) {
            positions.push(CandidatePosition {
                strategy: PositionStrategy::Rand { size: rand_size },
                corpus: corpus.to_string(),
            });
        }
        positions.push(CandidatePosition {
            strategy: PositionStrategy::Full,
            corpus: corpus.to_string(),
        });
        CandidateSpec {
            positions,
            rng_seed,
        }
    }

    pub fn depth(&self) -> usize {
        self.positions.len()
    }

    /// Human-readable shape, e.g. "RAND(20) x FULL".
    pub fn describe(&self) -> String {
        let parts: Vec<String> = self
            .positions
            .iter()
            .map(|p| match p.strategy {
                PositionStrategy::Rand { size } => format!("RAND({size})@{}", p.corpus),
                PositionStrategy::Full => format!("FULL@{}", p.corpus),
            })
            .collect();
        parts.join(" x ")
    }
}

/// Builds the K candidate sets. RAND positions sample without replacement with
/// the `CandidateSpec` seed; FULL positions take the whole corpus in load order.
pub fn build_candidates(
    spec: &CandidateSpec,
    corpora: &BTreeMap<String, Vec<Prompt>>,
) -> Result<Vec<Vec<Prompt>>, DatasetError> {
    if spec.positions.len() < 2 {
        return Err(DatasetError::TooFewPositions(spec.positions.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut sets = Vec::with_capacity(spec.positions.len());
    for (idx, position) in spec.positions.iter().enumerate() {
        let pool = corpora
            .get(&position.corpus)
            .ok_or_else(|| DatasetError::UnknownCorpus {
                position: idx,
                corpus: position.corpus.clone(),
            })?;
        match position.strategy {
            PositionStrategy::Full => sets.push(pool.clone()),
            PositionStrategy::Rand { size } => {
                if size == 0 {
                    return Err(DatasetError::EmptySample);
                }
                if size > pool.len() {
                    return Err(DatasetError::SampleTooLarge {
                        position: idx,
                        size,
                        available: pool.len(),
                    });
                }
                let picked = rand::seq::index::sample(&mut rng, pool.len(), size);
                let mut subset: Vec<Prompt> =
                    picked.into_iter().map(|i| pool[i].clone()).collect();
                // Keep corpus order inside the sample for reproducible streams.
                subset.sort_by(|a, b| a.id.cmp(&b.id));
                sets.push(subset);
            }
        }
    }
    Ok(sets)
}

/// Lazy cross-product stream over the candidate sets, skipping tuples with a
/// repeated seed id. Order is lexicographic in the candidate indices.
pub struct TupleStream<'a> {
    sets: &'a [Vec<Prompt>],
    indices: Vec<usize>,
    done: bool,
}

impl<'a> TupleStream<'a> {
    pub fn new(sets: &'a [Vec<Prompt>]) -> Self {
        let done = sets.is_empty() || sets.iter().any(|s| s.is_empty());
        TupleStream {
            sets,
            indices: vec![0; sets.len()],
            done,
        }
    }

    /// Product of the candidate set sizes, before distinctness exclusions.
    pub fn theoretical_count(sets: &[Vec<Prompt>]) -> usize {
        sets.iter().map(Vec::len).product()
    }

    fn advance(&mut self) {
        for pos in (0..self.indices.len()).rev() {
            self.indices[pos] += 1;
            if self.indices[pos] < self.sets[pos].len() {
                return;
            }
            self.indices[pos] = 0;
        }
        self.done = true;
    }
}

impl<'a> Iterator for TupleStream<'a> {
    type Item = Vec<&'a Prompt>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let tuple: Vec<&Prompt> = self
                .indices
                .iter()
                .zip(self.sets)
                .map(|(&i, set)| &set[i])
                .collect();
            self.advance();
            let mut seen = HashSet::with_capacity(tuple.len());
            if tuple.iter().all(|p| seen.insert(p.id.as_str())) {
                return Some(tuple);
            }
        }
        None
    }
}

/// Enumerates seed tuples for the given candidate sets.
pub fn enumerate_tuples<'a>(candidates: &'a [Vec<Prompt>]) -> TupleStream<'a> {
    TupleStream::new(candidates)
}

/// Everything a build needs besides the corpora and backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildConfig {
    pub name: String,
    pub candidate_spec: CandidateSpec,
    /// Recorded in the manifest; candidate sampling uses the candidate set's own seed.
    pub build_seed: u64,
    /// Run the three-stage verification chain over composed items.
    #[serde(default = "default_true")]
    pub run_filters: bool,
    /// Keep rejected items in the returned outcome (they are never counted in
    /// `entries`).
    #[serde(default)]
    pub include_rejected: bool,
    /// Cap on enumerated tuples, for smoke runs.
    #[serde(default)]
    pub max_items: Option<usize>,
    /// Resumable builds: skip tuples before the checkpointed index and write
    /// the index back on backend exhaustion.
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    next_tuple_index: usize,
}

/// Result of a dataset build.
#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub dataset: Vec<ComposedPrompt>,
    pub rejected: Vec<ComposedPrompt>,
    pub manifest: DatasetManifest,
    /// False when the backend was exhausted and a checkpoint was written.
    pub complete: bool,
}

/// Enumerate → compose → filter → report. Composition rejects are tallied as a
/// "compose" stage in the retention report; the verification stages follow.
pub fn build_dataset<B: ComposeBackend + VerifyBackend>(
    config: &BuildConfig,
    corpora: &BTreeMap<String, Vec<Prompt>>,
    backend: &B,
) -> Result<BuildOutcome, DatasetError> {
    let candidates = build_candidates(&config.candidate_spec, corpora)?;
    let composer = Composer::new(backend);

    let resume_from = read_checkpoint(config)?;
    let mut composed = Vec::new();
    let mut compose_reasons: BTreeMap<String, usize> = BTreeMap::new();
    let mut enumerated = 0usize;
    let mut complete = true;

    for (index, tuple) in enumerate_tuples(&candidates).enumerate() {
        if let Some(cap) = config.max_items {
            if enumerated >= cap {
                break;
            }
        }
        if index < resume_from {
            continue;
        }
        enumerated += 1;
        let seeds: Vec<Prompt> = tuple.into_iter().cloned().collect();
        match composer.spc(&seeds) {
            Ok(item) => composed.push(item),
            Err(ComposeError::Rejected { stage, .. }) => {
                *compose_reasons
                    .entry(format!("compose-stage{stage}"))
                    .or_insert(0) += 1;
            }
            Err(ComposeError::BackendExhausted { reason, .. }) => {
                log::warn!("backend exhausted at tuple {index}: {reason}; checkpointing");
                write_checkpoint(config, index)?;
                complete = false;
                break;
            }
            Err(ComposeError::Precondition(reason)) => {
                // Distinctness is enforced by enumeration; anything else here
                // is a defective tuple, counted like a compose reject.
                log::debug!("tuple {index} precondition: {reason}");
                *compose_reasons.entry("compose-precondition".into()).or_insert(0) += 1;
            }
        }
    }

    let mut report = RetentionReport::new(enumerated);
    report.push_stage("compose", composed.len(), compose_reasons);

    let all_prompts: Vec<Prompt> = corpora.values().flatten().cloned().collect();
    let index = CorpusIndex::from_prompts(&all_prompts);

    let (kept, rejected) = if config.run_filters {
        let outcome = run_filter_chain(composed, &index, backend);
        for stage in outcome.report.stages {
            report.push_stage(&stage.stage, stage.kept, stage.reasons);
        }
        (outcome.kept, outcome.rejected)
    } else {
        (composed, Vec::new())
    };

    if complete {
        clear_checkpoint(config);
    }

    let manifest = DatasetManifest {
        name: config.name.clone(),
        entries: kept.len(),
        depth: config.candidate_spec.depth(),
        build_seed: config.build_seed,
        candidate_spec: config.candidate_spec.describe(),
        retention: report,
        compose_cache_hits: composer.cache_hits(),
    };
    Ok(BuildOutcome {
        dataset: kept,
        rejected: if config.include_rejected {
            rejected
        } else {
            Vec::new()
        },
        manifest,
        complete,
    })
}

fn read_checkpoint(config: &BuildConfig) -> Result<usize, DatasetError> {
    let Some(path) = &config.checkpoint_path else {
        return Ok(0);
    };
    if !path.exists() {
        return Ok(0);
    }
    let body = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Checkpoint(e.to_string()))?;
    let checkpoint: Checkpoint =
        serde_json::from_str(&body).map_err(|e| DatasetError::Checkpoint(e.to_string()))?;
    Ok(checkpoint.next_tuple_index)
}

fn write_checkpoint(config: &BuildConfig, next_tuple_index: usize) -> Result<(), DatasetError> {
    let Some(path) = &config.checkpoint_path else {
        return Ok(());
    };
    let body = serde_json::to_string_pretty(&Checkpoint { next_tuple_index })
        .expect("checkpoint serializes");
    std::fs::write(path, body).map_err(|e| DatasetError::Checkpoint(e.to_string()))
}

fn clear_checkpoint(config: &BuildConfig) {
    if let Some(path) = &config.checkpoint_path {
        let _ = std::fs::remove_file(path);
    }
}

/// When the curriculum moves to the next depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumTrigger {
    /// Advance once the solve_all ratio stays at or above this threshold...
    pub solve_all_threshold: f64,
    /// ...for this many consecutive probes.
    pub window: usize,
}

impl Default for CurriculumTrigger {
    fn default() -> Self {
        CurriculumTrigger {
            solve_all_threshold: 0.6,
            window: 3,
        }
    }
}

/// Where the curriculum currently stands. Depth 1 means the original prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub stage_depth: usize,
    pub trigger: CurriculumTrigger,
    /// solve_all ratios of past probes, oldest first.
    pub history: Vec<f64>,
    pub current_dataset: String,
    /// Dataset reference per depth stage.
    pub stage_datasets: BTreeMap<usize, String>,
}

impl CurriculumState {
    pub fn new(trigger: CurriculumTrigger, stage_datasets: BTreeMap<usize, String>) -> Self {
        let current = stage_datasets.get(&1).cloned().unwrap_or_default();
        CurriculumState {
            stage_depth: 1,
            trigger,
            history: Vec::new(),
            current_dataset: current,
            stage_datasets,
        }
    }
}

/// Folds one probe into the curriculum: when the last `window` probes all meet
/// the saturation threshold, the depth advances and the next stage's dataset
/// becomes current. The depth never decreases.
pub fn curriculum_advance(
    state: &CurriculumState,
    probe: &BatchReport,
) -> Result<CurriculumState, DatasetError> {
    let mut next = state.clone();
    next.history.push(probe.solve_all_ratio);
    let w = next.trigger.window.max(1);
    let saturated = next.history.len() >= w
        && next
            .history
            .iter()
            .rev()
            .take(w)
            .all(|r| *r >= next.trigger.solve_all_threshold);
    if saturated {
        let target = next.stage_depth + 1;
        let dataset = next
            .stage_datasets
            .get(&target)
            .ok_or(DatasetError::NextStageDatasetMissing(target))?;
        next.current_dataset = dataset.clone();
        next.stage_depth = target;
        next.history.clear();
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::{template, TemplateBackend};

    fn corpora(n: usize, seed: u64) -> BTreeMap<String, Vec<Prompt>> {
        let mut map = BTreeMap::new();
        map.insert("main".to_string(), template::generate_corpus(n, seed));
        map
    }

    #[test]
    fn rand_sampling_is_seeded_and_bounded() {
        let pools = corpora(30, 1);
        let spec = CandidateSpec::standard(2, "main", 5, 99);
        let a = build_candidates(&spec, &pools).unwrap();
        let b = build_candidates(&spec, &pools).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].len(), 5);
        assert_eq!(a[1].len(), 30);

        let too_big = CandidateSpec::standard(2, "main", 31, 99);
        assert!(matches!(
            build_candidates(&too_big, &pools),
            Err(DatasetError::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn enumeration_skips_the_diagonal() {
        let pools = corpora(4, 2);
        let main = &pools["main"];
        // D1 = {a, b}, D2 = {a, c} style overlap.
        let sets = vec![
            vec![main[0].clone(), main[1].clone()],
            vec![main[0].clone(), main[2].clone()],
        ];
        let tuples: Vec<Vec<String>> = enumerate_tuples(&sets)
            .map(|t| t.iter().map(|p| p.id.clone()).collect())
            .collect();
        assert_eq!(tuples.len(), 3);
        assert!(tuples
            .iter()
            .all(|t| t[0] != t[1]));
    }

    #[test]
    fn tuple_count_matches_brute_force_on_small_corpora() {
        let pools = corpora(12, 3);
        let spec = CandidateSpec::standard(3, "main", 4, 7);
        let sets = build_candidates(&spec, &pools).unwrap();
        let streamed = enumerate_tuples(&sets).count();
        let mut brute = 0usize;
        for a in &sets[0] {
            for b in &sets[1] {
                for c in &sets[2] {
                    let mut ids = vec![&a.id, &b.id, &c.id];
                    ids.sort();
                    ids.dedup();
                    if ids.len() == 3 {
                        brute += 1;
                    }
                }
            }
        }
        assert_eq!(streamed, brute);
        assert_eq!(TupleStream::theoretical_count(&sets), 4 * 4 * 12);
    }

    #[test]
    fn template_build_is_deterministic() {
        let pools = corpora(10, 4);
        let backend = TemplateBackend::new();
        let config = BuildConfig {
            name: "unit".into(),
            candidate_spec: CandidateSpec::standard(2, "main", 3, 5),
            build_seed: 5,
            run_filters: true,
            include_rejected: false,
            max_items: None,
            checkpoint_path: None,
        };
        let a = build_dataset(&config, &pools, &backend).unwrap();
        let b = build_dataset(&config, &pools, &backend).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.manifest, b.manifest);
        assert!(a.complete);
        assert!(a.manifest.retention.telescopes());
        // Template compositions all pass the chain.
        assert_eq!(a.manifest.entries, a.manifest.retention.input_count);
    }

    #[test]
    fn cross_domain_positions_have_no_diagonal() {
        let mut pools = BTreeMap::new();
        pools.insert("physics".to_string(), template::generate_corpus(3, 8));
        pools.insert("math".to_string(), template::generate_corpus(4, 9));
        let spec = CandidateSpec {
            positions: vec![
                CandidatePosition {
                    strategy: PositionStrategy::Full,
                    corpus: "physics".into(),
                },
                CandidatePosition {
                    strategy: PositionStrategy::Full,
                    corpus: "math".into(),
                },
            ],
            rng_seed: 0,
        };
        let sets = build_candidates(&spec, &pools).unwrap();
        // Disjoint corpora: the full cross product survives.
        assert_eq!(enumerate_tuples(&sets).count(), 12);

        let backend = TemplateBackend::new();
        let config = BuildConfig {
            name: "cross".into(),
            candidate_spec: spec,
            build_seed: 0,
            run_filters: true,
            include_rejected: false,
            max_items: None,
            checkpoint_path: None,
        };
        let outcome = build_dataset(&config, &pools, &backend).unwrap();
        assert_eq!(outcome.manifest.retention.input_count, 12);
        assert!(outcome.manifest.retention.telescopes());
    }

    #[test]
    fn extraction_cache_hits_are_recorded() {
        let pools = corpora(20, 6);
        let backend = TemplateBackend::new();
        let config = BuildConfig {
            name: "cache".into(),
            candidate_spec: CandidateSpec::standard(2, "main", 2, 5),
            build_seed: 5,
            run_filters: false,
            include_rejected: false,
            max_items: None,
            checkpoint_path: None,
        };
        let outcome = build_dataset(&config, &pools, &backend).unwrap();
        // Two upstream candidates pair with ~20 downstream prompts each; all
        // but the first extraction per upstream prompt hit the cache.
        assert!(outcome.manifest.compose_cache_hits > 30);
    }

    #[test]
    fn curriculum_advances_after_sustained_saturation() {
        let mut datasets = BTreeMap::new();
        datasets.insert(1, "depth1.jsonl".to_string());
        datasets.insert(2, "depth2.jsonl".to_string());
        let state = CurriculumState::new(CurriculumTrigger::default(), datasets);

        let probe = |ratio: f64| {
            let mut report = BatchReport::from_pass_counts(std::iter::empty());
            report.oversampled = 100;
            report.solve_all = (ratio * 100.0) as usize;
            report.kept = report.oversampled - report.solve_all;
            report.solve_all_ratio = ratio;
            report
        };

        let s1 = curriculum_advance(&state, &probe(0.7)).unwrap();
        assert_eq!(s1.stage_depth, 1);
        let s2 = curriculum_advance(&s1, &probe(0.72)).unwrap();
        assert_eq!(s2.stage_depth, 1);
        let s3 = curriculum_advance(&s2, &probe(0.75)).unwrap();
        assert_eq!(s3.stage_depth, 2);
        assert_eq!(s3.current_dataset, "depth2.jsonl");
    }

    #[test]
    fn broken_window_does_not_advance() {
        let state = CurriculumState::new(CurriculumTrigger::default(), BTreeMap::new());
        let probe = |ratio: f64| BatchReport {
            oversampled: 10,
            kept: 10,
            solve_all: 0,
            solve_none: 0,
            solve_all_ratio: ratio,
            pass_rate_histogram: BTreeMap::new(),
        };
        let s1 = curriculum_advance(&state, &probe(0.7)).unwrap();
        let s2 = curriculum_advance(&s1, &probe(0.5)).unwrap();
        let s3 = curriculum_advance(&s2, &probe(0.7)).unwrap();
        assert_eq!(s3.stage_depth, 1);
    }

    #[test]
    fn stage_depth_is_monotone_over_any_probe_sequence() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let mut datasets = BTreeMap::new();
        // Enough stages that a 200-probe sequence can never run out (window 3).
        for depth in 1..=70 {
            datasets.insert(depth, format!("depth{depth}.jsonl"));
        }
        let mut state = CurriculumState::new(CurriculumTrigger::default(), datasets);
        let mut previous = state.stage_depth;
        for _ in 0..200 {
            let ratio: f64 = rng.gen_range(0.0..1.0);
            let probe = BatchReport {
                oversampled: 100,
                kept: 100 - (ratio * 100.0) as usize,
                solve_all: (ratio * 100.0) as usize,
                solve_none: 0,
                solve_all_ratio: ratio,
                pass_rate_histogram: BTreeMap::new(),
            };
            state = curriculum_advance(&state, &probe).unwrap();
            assert!(state.stage_depth >= previous);
            previous = state.stage_depth;
        }
    }

    #[test]
    fn missing_next_stage_dataset_is_an_error() {
        let mut datasets = BTreeMap::new();
        datasets.insert(1, "depth1.jsonl".to_string());
        let state = CurriculumState::new(
            CurriculumTrigger {
                solve_all_threshold: 0.5,
                window: 1,
            },
            datasets,
        );
        let probe = BatchReport {
            oversampled: 10,
            kept: 2,
            solve_all: 8,
            solve_none: 0,
            solve_all_ratio: 0.8,
            pass_rate_histogram: BTreeMap::new(),
        };
        assert!(matches!(
            curriculum_advance(&state, &probe),
            Err(DatasetError::NextStageDatasetMissing(2))
        ));
    }
}
