//! Config file handling and flag overrides.
//!
//! One TOML document drives every command; each CLI flag overrides exactly one
//! key, so any run is reproducible from the config file alone.

use crate::{BackendChoice, Cli};
use promptcomp::corpus::{self, Prompt};
use promptcomp::dataset::{BuildConfig, CandidatePosition, CandidateSpec, PositionStrategy};
use promptcomp::gateway::{Budget, DecodingProfile, Gateway, GatewayConfig, RetryPolicy};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("verification produced an empty dataset")]
    EmptyDataset,
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// Exit code mapping: 2 config, 3 backend, 4 empty dataset, 1 otherwise.
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
            CliError::EmptyDataset => 4,
            CliError::Other(_) => 1,
        }
    }

    pub fn from_compose(err: promptcomp::composer::ComposeError) -> Self {
        use promptcomp::composer::ComposeError;
        match err {
            ComposeError::BackendExhausted { .. } => CliError::Backend(err.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }

    pub fn from_dataset(err: promptcomp::dataset::DatasetError) -> Self {
        use promptcomp::dataset::DatasetError;
        match err {
            DatasetError::UnknownCorpus { .. }
            | DatasetError::TooFewPositions(_)
            | DatasetError::SampleTooLarge { .. }
            | DatasetError::EmptySample
            | DatasetError::NextStageDatasetMissing(_) => CliError::Config(err.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }

    pub fn from_gateway(err: promptcomp::gateway::GatewayError) -> Self {
        CliError::Backend(err.to_string())
    }
}

impl From<corpus::CorpusError> for CliError {
    fn from(err: corpus::CorpusError) -> Self {
        CliError::Config(err.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Llm,
    Template,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    backend: Option<String>,
    depth: Option<usize>,
    out: Option<PathBuf>,
    #[serde(default)]
    corpora: BTreeMap<String, PathBuf>,
    compose: Option<ComposeSection>,
    build: Option<BuildSection>,
    verify: Option<VerifySection>,
    probe: Option<ProbeSection>,
    curriculum: Option<CurriculumSection>,
    report: Option<ReportSection>,
    gateway: Option<GatewaySection>,
    composer: Option<ComposerSection>,
}

/// Decoding overrides for the LLM composition backend.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposerSection {
    model: Option<String>,
    temperature: Option<f64>,
    nucleus: Option<f64>,
    max_output_tokens: Option<u32>,
    template_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposeSection {
    seeds: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildSection {
    name: Option<String>,
    rand_size: Option<usize>,
    positions: Option<Vec<PositionEntry>>,
    run_filters: Option<bool>,
    include_rejected: Option<bool>,
    max_items: Option<usize>,
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PositionEntry {
    strategy: String,
    size: Option<usize>,
    corpus: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifySection {
    input: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeSection {
    dataset: Option<PathBuf>,
    g: Option<usize>,
    profile: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurriculumSection {
    state: Option<PathBuf>,
    probe_report: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportSection {
    manifest: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GatewaySection {
    endpoint: Option<String>,
    model: Option<String>,
    max_in_flight: Option<usize>,
    retry: Option<RetryPolicy>,
    budget: Option<Budget>,
    audit_log: Option<PathBuf>,
    cache_path: Option<PathBuf>,
}

/// Config after merging the file with flag overrides.
#[derive(Debug)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub backend: Backend,
    pub depth: usize,
    pub out_dir: PathBuf,
    pub corpora: BTreeMap<String, PathBuf>,
    pub compose_seed_ids: Option<Vec<String>>,
    pub build_name: String,
    pub rand_size: usize,
    pub positions: Option<Vec<CandidatePosition>>,
    pub run_filters: bool,
    pub include_rejected: bool,
    pub max_items: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub verify_input: Option<PathBuf>,
    pub probe_dataset: Option<PathBuf>,
    pub probe_g: usize,
    pub probe_profile_name: String,
    pub curriculum_state: Option<PathBuf>,
    pub curriculum_probe_report: Option<PathBuf>,
    pub report_manifest: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub budget: Budget,
    pub audit_log: Option<PathBuf>,
    pub cache_path: Option<PathBuf>,
    pub composer_cfg: promptcomp::composer::BackendConfig,
}

impl ResolvedConfig {
    pub fn load(cli: &Cli) -> Result<Self, CliError> {
        let file: FileConfig = match &cli.config {
            Some(path) => {
                let body = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                toml::from_str(&body)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let backend = match (&cli.backend, file.backend.as_deref()) {
            (Some(BackendChoice::Llm), _) => Backend::Llm,
            (Some(BackendChoice::Template), _) => Backend::Template,
            (None, Some("llm")) => Backend::Llm,
            (None, Some("template")) | (None, None) => Backend::Template,
            (None, Some(other)) => {
                return Err(CliError::Config(format!(
                    "backend must be \"llm\" or \"template\", got {other:?}"
                )))
            }
        };

        let build = file.build.unwrap_or_default();
        let gateway = file.gateway.unwrap_or_default();
        let probe = file.probe.unwrap_or_default();
        let curriculum = file.curriculum.unwrap_or_default();
        let composer = file.composer.unwrap_or_default();

        let defaults = promptcomp::composer::BackendConfig::default();
        let composer_cfg = promptcomp::composer::BackendConfig {
            kind: match backend {
                Backend::Llm => promptcomp::composer::BackendKind::Llm,
                Backend::Template => promptcomp::composer::BackendKind::Template,
            },
            model: composer.model.unwrap_or_default(),
            temperature: composer.temperature.unwrap_or(defaults.temperature),
            nucleus: composer.nucleus.unwrap_or(defaults.nucleus),
            max_output_tokens: composer
                .max_output_tokens
                .unwrap_or(defaults.max_output_tokens),
            template_seed: composer
                .template_seed
                .or(cli.seed)
                .or(file.seed)
                .unwrap_or(0),
        };

        let positions = match build.positions {
            None => None,
            Some(entries) => {
                let mut out = Vec::with_capacity(entries.len());
                for (i, entry) in entries.into_iter().enumerate() {
                    let strategy = match entry.strategy.as_str() {
                        "full" => PositionStrategy::Full,
                        "rand" => PositionStrategy::Rand {
                            size: entry.size.ok_or_else(|| {
                                CliError::Config(format!("positions[{i}]: rand needs size"))
                            })?,
                        },
                        other => {
                            return Err(CliError::Config(format!(
                                "positions[{i}]: unknown strategy {other:?}"
                            )))
                        }
                    };
                    out.push(CandidatePosition {
                        strategy,
                        corpus: entry.corpus,
                    });
                }
                Some(out)
            }
        };

        Ok(ResolvedConfig {
            seed: cli.seed.or(file.seed).unwrap_or(0),
            backend,
            depth: cli.depth.or(file.depth).unwrap_or(2),
            out_dir: cli
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("out")),
            corpora: file.corpora,
            compose_seed_ids: file.compose.and_then(|c| c.seeds),
            build_name: build.name.unwrap_or_else(|| "dataset".to_string()),
            rand_size: build.rand_size.unwrap_or(20),
            positions,
            run_filters: build.run_filters.unwrap_or(true),
            include_rejected: build.include_rejected.unwrap_or(false),
            max_items: build.max_items,
            checkpoint: build.checkpoint,
            verify_input: file.verify.and_then(|v| v.input),
            probe_dataset: probe.dataset,
            probe_g: probe.g.unwrap_or(8),
            probe_profile_name: probe.profile.unwrap_or_else(|| "rollout".to_string()),
            curriculum_state: curriculum.state,
            curriculum_probe_report: curriculum.probe_report,
            report_manifest: file.report.and_then(|r| r.manifest),
            endpoint: cli.endpoint.clone().or(gateway.endpoint),
            model: gateway.model.unwrap_or_default(),
            max_in_flight: cli.max_inflight.or(gateway.max_in_flight).unwrap_or(8),
            retry: gateway.retry.unwrap_or_default(),
            budget: gateway.budget.unwrap_or_default(),
            audit_log: gateway.audit_log,
            cache_path: gateway.cache_path,
            composer_cfg,
        })
    }

    pub fn load_corpora(&self) -> Result<BTreeMap<String, Vec<Prompt>>, CliError> {
        if self.corpora.is_empty() {
            return Err(CliError::Config(
                "no corpora configured ([corpora] table is empty)".into(),
            ));
        }
        let mut out = BTreeMap::new();
        for (name, path) in &self.corpora {
            out.insert(name.clone(), corpus::load_prompts(path)?);
        }
        Ok(out)
    }

    /// The corpus named "main", or the only corpus when there is exactly one.
    pub fn main_corpus<'a>(
        &self,
        corpora: &'a BTreeMap<String, Vec<Prompt>>,
    ) -> Result<&'a Vec<Prompt>, CliError> {
        if let Some(main) = corpora.get("main") {
            return Ok(main);
        }
        if corpora.len() == 1 {
            return Ok(corpora.values().next().unwrap());
        }
        Err(CliError::Config(
            "multiple corpora configured; name one of them \"main\"".into(),
        ))
    }

    pub fn build_config(&self) -> Result<BuildConfig, CliError> {
        let candidate_spec = match &self.positions {
            Some(positions) => CandidateSpec {
                positions: positions.clone(),
                rng_seed: self.seed,
            },
            None => {
                let corpus_name = if self.corpora.contains_key("main") {
                    "main".to_string()
                } else if self.corpora.len() == 1 {
                    self.corpora.keys().next().unwrap().clone()
                } else {
                    return Err(CliError::Config(
                        "multiple corpora configured; give explicit build.positions".into(),
                    ));
                };
                CandidateSpec::standard(self.depth, &corpus_name, self.rand_size, self.seed)
            }
        };
        Ok(BuildConfig {
            name: self.build_name.clone(),
            candidate_spec,
            build_seed: self.seed,
            run_filters: self.run_filters,
            include_rejected: self.include_rejected,
            max_items: self.max_items,
            checkpoint_path: self.checkpoint.clone(),
        })
    }

    pub fn build_gateway(&self) -> Result<Gateway, CliError> {
        let endpoint = self.endpoint.clone().ok_or_else(|| {
            CliError::Config("gateway.endpoint (or --endpoint) is required".into())
        })?;
        let config = GatewayConfig {
            endpoint,
            model: self.model.clone(),
            max_in_flight: self.max_in_flight,
            retry: self.retry.clone(),
            budget: self.budget.clone(),
            audit_log: self.audit_log.clone(),
            cache_path: self.cache_path.clone(),
        };
        Gateway::new(config).map_err(CliError::from_gateway)
    }

    pub fn probe_profile(&self) -> DecodingProfile {
        match self.probe_profile_name.as_str() {
            "eval" => DecodingProfile::eval(),
            "composer" => DecodingProfile::composer(),
            _ => DecodingProfile::rollout(),
        }
    }
}
