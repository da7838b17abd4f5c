//! Canonical data model and JSONL persistence for seed prompts, composed
//! prompts, and dataset manifests.
//!
//! Records persist as one JSON object per line with a fixed field order, so
//! identical inputs produce byte-identical files. Prompt ids are content-derived
//! hashes (source + normalized text), which keeps them stable when corpora are
//! merged or reordered.

use crate::answer::{parse_answer, AnswerValue};
use crate::verify::RetentionReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("corpus is empty: {path}")]
    EmptyCorpus { path: PathBuf },
}

/// A verifiable question with its ground-truth answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
    pub ground_truth: String,
    #[serde(default)]
    pub domain: String,
    #[serde(default)]
    pub source: String,
}

/// A character span `[start, end)` into a question text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The spanned substring, by character offsets.
    pub fn slice_of(&self, text: &str) -> Option<String> {
        let chars: Vec<char> = text.chars().collect();
        if self.start > self.end || self.end > chars.len() {
            return None;
        }
        Some(chars[self.start..self.end].iter().collect())
    }

    /// Returns `text` with this span replaced by `replacement`.
    pub fn replace_in(&self, text: &str, replacement: &str) -> Option<String> {
        let chars: Vec<char> = text.chars().collect();
        if self.start > self.end || self.end > chars.len() {
            return None;
        }
        let mut out: String = chars[..self.start].iter().collect();
        out.push_str(replacement);
        out.extend(chars[self.end..].iter());
        Some(out)
    }
}

/// One link of a composition: the upstream value, its natural-language
/// definition, and the literal replaced downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionStep {
    pub v1: AnswerValue,
    pub definition_d1: String,
    pub variable_x: String,
    pub v2: AnswerValue,
    /// Span of the replaced literal in the original downstream text.
    pub v2_locus: Span,
    pub variable_y: String,
    /// Exact `v1 - v2`.
    pub delta: AnswerValue,
    pub relation_text: String,
}

/// Verification status of a composed prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Unverified,
    Verified,
    Rejected { stage: u8, reason: String },
}

/// A depth-K composed prompt. The ground truth is inherited from the last seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedPrompt {
    pub id: String,
    pub text: String,
    pub ground_truth: String,
    pub depth: usize,
    pub seed_ids: Vec<String>,
    /// Steps in reading order: `steps[k]` links seed `k` to everything after it.
    pub steps: Vec<CompositionStep>,
    pub status: Status,
}

impl ComposedPrompt {
    /// Structural invariants that hold for every well-formed composition.
    pub fn validate(&self) -> Result<(), String> {
        if self.depth < 2 {
            return Err(format!("depth {} < 2", self.depth));
        }
        if self.seed_ids.len() != self.depth {
            return Err("seed count != depth".into());
        }
        let distinct: HashSet<&String> = self.seed_ids.iter().collect();
        if distinct.len() != self.seed_ids.len() {
            return Err("seed ids not pairwise distinct".into());
        }
        if self.steps.len() + 1 != self.depth {
            return Err("step count != depth - 1".into());
        }
        Ok(())
    }
}

/// Wire form of a composition step; values persist as canonical text.
#[derive(Serialize, Deserialize)]
struct StepWire {
    v1: String,
    d1: String,
    var_x: String,
    v2: String,
    v2_span: [usize; 2],
    var_y: String,
    delta: String,
    relation: String,
}

impl From<&CompositionStep> for StepWire {
    fn from(s: &CompositionStep) -> Self {
        StepWire {
            v1: s.v1.render(),
            d1: s.definition_d1.clone(),
            var_x: s.variable_x.clone(),
            v2: s.v2.render(),
            v2_span: [s.v2_locus.start, s.v2_locus.end],
            var_y: s.variable_y.clone(),
            delta: s.delta.render(),
            relation: s.relation_text.clone(),
        }
    }
}

impl StepWire {
    fn into_step(self) -> Result<CompositionStep, String> {
        Ok(CompositionStep {
            v1: parse_answer(&self.v1).map_err(|e| e.to_string())?,
            definition_d1: self.d1,
            variable_x: self.var_x,
            v2: parse_answer(&self.v2).map_err(|e| e.to_string())?,
            v2_locus: Span::new(self.v2_span[0], self.v2_span[1]),
            variable_y: self.var_y,
            delta: parse_answer(&self.delta).map_err(|e| e.to_string())?,
            relation_text: self.relation,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ComposedWire {
    id: String,
    text: String,
    ground_truth: String,
    depth: usize,
    seed_ids: Vec<String>,
    steps: Vec<StepWire>,
    status: Status,
}

impl Serialize for ComposedPrompt {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ComposedWire {
            id: self.id.clone(),
            text: self.text.clone(),
            ground_truth: self.ground_truth.clone(),
            depth: self.depth,
            seed_ids: self.seed_ids.clone(),
            steps: self.steps.iter().map(StepWire::from).collect(),
            status: self.status.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ComposedPrompt {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = ComposedWire::deserialize(deserializer)?;
        let mut steps = Vec::with_capacity(wire.steps.len());
        for s in wire.steps {
            steps.push(s.into_step().map_err(serde::de::Error::custom)?);
        }
        Ok(ComposedPrompt {
            id: wire.id,
            text: wire.text,
            ground_truth: wire.ground_truth,
            depth: wire.depth,
            seed_ids: wire.seed_ids,
            steps,
            status: wire.status,
        })
    }
}

/// Provenance and bookkeeping for a built dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub entries: usize,
    pub depth: usize,
    pub build_seed: u64,
    /// Human-readable description of how the candidate sets were constructed.
    pub candidate_spec: String,
    pub retention: RetentionReport,
    /// Extraction-cache hits during composition (one upstream prompt pairs
    /// with many downstream ones, so its extraction is reused).
    #[serde(default)]
    pub compose_cache_hits: usize,
}

/// Whitespace collapse + case fold; the dedup key for seed prompts.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Content-derived prompt id: hash of the source name and normalized text.
pub fn prompt_id(source: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(source.as_bytes());
    hasher.update(b"\n");
    hasher.update(normalize_text(text).as_bytes());
    let digest = hasher.finalize();
    hex_prefix(&digest, 16)
}

/// Content-derived id for a composed prompt.
pub fn composed_id(seed_ids: &[String], text: &str) -> String {
    let mut hasher = Sha256::new();
    for id in seed_ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\x1f");
    }
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    hex_prefix(&digest, 16)
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut out = String::with_capacity(chars);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
        if out.len() >= chars {
            break;
        }
    }
    out.truncate(chars);
    out
}

/// Loads a prompt corpus from a JSONL file.
///
/// Records need `text` and `ground_truth`; `id`, `domain`, and `source` are
/// filled in deterministically when absent. Duplicates by normalized text are
/// dropped (first occurrence wins).
pub fn load_prompts(path: &Path) -> Result<Vec<Prompt>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let default_source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());

    let mut prompts = Vec::new();
    let mut seen = HashSet::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: Prompt =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
        if record.text.trim().is_empty() || record.ground_truth.trim().is_empty() {
            return Err(CorpusError::MalformedRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: "text and ground_truth must be non-empty".into(),
            });
        }
        if record.source.is_empty() {
            record.source = default_source.clone();
        }
        if record.id.is_empty() {
            record.id = prompt_id(&record.source, &record.text);
        }
        if !seen.insert(normalize_text(&record.text)) {
            continue;
        }
        if !seen_ids.insert(record.id.clone()) {
            return Err(CorpusError::MalformedRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: format!("duplicate id {} for distinct text", record.id),
            });
        }
        prompts.push(record);
    }
    if prompts.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }
    Ok(prompts)
}

/// Writes prompts as JSONL, one object per line, stable field order.
pub fn save_prompts(path: &Path, prompts: &[Prompt]) -> Result<(), CorpusError> {
    write_jsonl(path, prompts)
}

/// Loads composed prompts from a JSONL file.
pub fn load_composed(path: &Path) -> Result<Vec<ComposedPrompt>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item: ComposedPrompt =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
        items.push(item);
    }
    Ok(items)
}

/// Sidecar manifest path for a dataset file: `<stem>.manifest.json`.
pub fn manifest_path(dataset_path: &Path) -> PathBuf {
    let stem = dataset_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    dataset_path.with_file_name(format!("{stem}.manifest.json"))
}

/// Saves a composed dataset plus its manifest sidecar.
///
/// Rejected items are skipped unless `include_rejected` is set; with the flag
/// off, an explicitly rejected item in `items` is filtered out silently, since
/// retention bookkeeping already accounts for it.
pub fn save_dataset(
    manifest: &DatasetManifest,
    items: &[ComposedPrompt],
    path: &Path,
    include_rejected: bool,
) -> Result<(), CorpusError> {
    let kept: Vec<&ComposedPrompt> = items
        .iter()
        .filter(|i| include_rejected || !matches!(i.status, Status::Rejected { .. }))
        .collect();
    write_jsonl(path, &kept)?;
    let manifest_file = manifest_path(path);
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&manifest_file, body + "\n").map_err(|source| CorpusError::Io {
        path: manifest_file,
        source,
    })?;
    Ok(())
}

/// Loads a manifest sidecar.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, CorpusError> {
    let body = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&body).map_err(|e| CorpusError::MalformedRecord {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for item in items {
        let json = serde_json::to_string(item).expect("record serializes");
        writer
            .write_all(json.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })?;
    }
    writer.flush().map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Id-indexed view of a loaded corpus; immutable and shareable.
#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    by_id: HashMap<String, Prompt>,
}

impl CorpusIndex {
    pub fn from_prompts(prompts: &[Prompt]) -> Self {
        CorpusIndex {
            by_id: prompts.iter().map(|p| (p.id.clone(), p.clone())).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&Prompt> {
        self.by_id.get(id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_corpus(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    #[test]
    fn loads_three_valid_records() {
        let f = write_corpus(&[
            r#"{"id":"","text":"What is 1+1?","ground_truth":"2","domain":"math","source":""}"#,
            r#"{"id":"","text":"What is 2+2?","ground_truth":"4","domain":"math","source":""}"#,
            r#"{"id":"","text":"What is 3+3?","ground_truth":"6","domain":"math","source":""}"#,
        ]);
        let prompts = load_prompts(f.path()).unwrap();
        assert_eq!(prompts.len(), 3);
        assert!(prompts.iter().all(|p| !p.id.is_empty()));
    }

    #[test]
    fn dedups_by_normalized_text() {
        let f = write_corpus(&[
            r#"{"id":"","text":"What is  1+1?","ground_truth":"2","domain":"","source":""}"#,
            r#"{"id":"","text":"what is 1+1?","ground_truth":"2","domain":"","source":""}"#,
        ]);
        let prompts = load_prompts(f.path()).unwrap();
        assert_eq!(prompts.len(), 1);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_corpus(&[]);
        assert!(matches!(
            load_prompts(f.path()),
            Err(CorpusError::EmptyCorpus { .. })
        ));
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let f = write_corpus(&[
            r#"{"id":"","text":"ok","ground_truth":"1","domain":"","source":""}"#,
            r#"{"text": 12}"#,
        ]);
        match load_prompts(f.path()) {
            Err(CorpusError::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed record, got {other:?}"),
        }
    }

    #[test]
    fn load_is_deterministic() {
        let f = write_corpus(&[
            r#"{"id":"","text":"q one","ground_truth":"1","domain":"","source":""}"#,
            r#"{"id":"","text":"q two","ground_truth":"2","domain":"","source":""}"#,
        ]);
        let a = load_prompts(f.path()).unwrap();
        let b = load_prompts(f.path()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_explicit_ids_are_rejected() {
        let f = write_corpus(&[
            r#"{"id":"same","text":"first question","ground_truth":"1","domain":"","source":""}"#,
            r#"{"id":"same","text":"second question","ground_truth":"2","domain":"","source":""}"#,
        ]);
        match load_prompts(f.path()) {
            Err(CorpusError::MalformedRecord { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("duplicate id"));
            }
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn prompt_save_load_is_identity() {
        let prompts = vec![
            Prompt {
                id: prompt_id("unit", "What is 5-3?"),
                text: "What is 5-3?".into(),
                ground_truth: "2".into(),
                domain: "math".into(),
                source: "unit".into(),
            },
            Prompt {
                id: prompt_id("unit", "What is 9/3?"),
                text: "What is 9/3?".into(),
                ground_truth: "3".into(),
                domain: "math".into(),
                source: "unit".into(),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompts.jsonl");
        save_prompts(&path, &prompts).unwrap();
        let loaded = load_prompts(&path).unwrap();
        assert_eq!(loaded, prompts);
    }

    #[test]
    fn span_replacement_uses_char_offsets() {
        let text = "area is 2πr² with r = 3";
        let span = Span::new(22, 23);
        assert_eq!(span.slice_of(text).unwrap(), "3");
        let replaced = span.replace_in(text, "Y").unwrap();
        assert_eq!(replaced, "area is 2πr² with r = Y");
    }
}
