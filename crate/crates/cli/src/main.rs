//! Operator CLI for the compositional prompt pipeline.
//!
//! Every run reads one TOML config (each flag maps 1:1 to a config key, so a
//! run is reproducible from the config alone), emits a machine-readable
//! summary JSON next to its outputs, and logs human-readable progress to
//! stderr. Exit codes: 0 ok, 2 config error, 3 backend/gateway error,
//! 4 verification produced an empty dataset, 1 anything else.

mod config;

use clap::{Parser, Subcommand, ValueEnum};
use promptcomp::composer::{ComposeTarget, Composer, LlmBackend, TemplateBackend};
use promptcomp::corpus::{self, CorpusIndex, Prompt};
use promptcomp::dataset::{build_dataset, curriculum_advance, BuildConfig, CurriculumState};
use promptcomp::gateway::{DecodingProfile, Gateway};
use promptcomp::rlvr::{run_self_check, BatchReport};
use promptcomp::verify::run_filter_chain;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use config::{CliError, ResolvedConfig};

#[derive(Parser)]
#[command(name = "promptcomp", version, about = "Compositional prompt pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config file; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendChoice>,
    /// Compositional depth K.
    #[arg(long, global = true)]
    depth: Option<usize>,
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long = "max-inflight", global = true)]
    max_inflight: Option<usize>,
    /// Output directory for datasets, reports, and the run summary.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendChoice {
    Llm,
    Template,
}

#[derive(Subcommand, Clone, Copy, Debug)]
enum Command {
    /// Compose one depth-K prompt from configured or leading seeds.
    Compose,
    /// Run the verification filter chain over a composed dataset.
    Verify,
    /// Enumerate, compose, filter, and persist a full dataset.
    BuildDataset,
    /// Roll out G samples per prompt against the endpoint and report solve rates.
    Probe,
    /// Fold a probe report into the curriculum state.
    Curriculum,
    /// Run the RL kernel invariant suite.
    GrpoCheck,
    /// Summarize a dataset manifest.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Compose => "compose",
            Command::Verify => "verify",
            Command::BuildDataset => "build-dataset",
            Command::Probe => "probe",
            Command::Curriculum => "curriculum",
            Command::GrpoCheck => "grpo-check",
            Command::Report => "report",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let command = cli.command;
    let resolved = match ResolvedConfig::load(&cli) {
        Ok(r) => r,
        Err(err) => {
            // No config, no summary dir: report on stderr only.
            log::error!("{err}");
            return ExitCode::from(err.code());
        }
    };
    let outcome = run(command, &resolved);
    let (payload, code) = match outcome {
        Ok(value) => (
            json!({"command": command.name(), "ok": true, "result": value}),
            0u8,
        ),
        Err(err) => {
            log::error!("{err}");
            (
                json!({"command": command.name(), "ok": false, "error": err.to_string()}),
                err.code(),
            )
        }
    };
    if let Err(io) = write_summary(&resolved.out_dir, command.name(), &payload) {
        log::error!("failed to write summary: {io}");
        return ExitCode::from(if code == 0 { 1 } else { code });
    }
    ExitCode::from(code)
}

fn write_summary(out_dir: &Path, command: &str, payload: &serde_json::Value) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{command}-summary.json"));
    std::fs::write(&path, serde_json::to_string_pretty(payload)? + "\n")?;
    log::info!("summary written to {}", path.display());
    Ok(())
}

fn run(command: Command, cfg: &ResolvedConfig) -> Result<serde_json::Value, CliError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::Other(e.to_string()))?;
    match command {
        Command::Compose => cmd_compose(cfg),
        Command::Verify => cmd_verify(cfg),
        Command::BuildDataset => cmd_build(cfg),
        Command::Probe => cmd_probe(cfg),
        Command::Curriculum => cmd_curriculum(cfg),
        Command::GrpoCheck => cmd_grpo_check(cfg),
        Command::Report => cmd_report(cfg),
    }
}

/// Composes with whichever backend the config selects, reusing the same
/// downstream driver code for both.
fn with_backend<R>(
    cfg: &ResolvedConfig,
    f: impl FnOnce(&dyn DynBackend) -> Result<R, CliError>,
) -> Result<R, CliError> {
    match cfg.backend {
        config::Backend::Template => f(&TemplateBackend::new()),
        config::Backend::Llm => {
            let gateway = cfg.build_gateway()?;
            let backend = LlmBackend::from_config(&gateway, &cfg.composer_cfg);
            f(&backend)
        }
    }
}

/// Object-safe union of the two backend traits the pipeline needs.
trait DynBackend:
    promptcomp::composer::ComposeBackend + promptcomp::composer::VerifyBackend
{
}
impl<T: promptcomp::composer::ComposeBackend + promptcomp::composer::VerifyBackend> DynBackend
    for T
{
}

fn cmd_compose(cfg: &ResolvedConfig) -> Result<serde_json::Value, CliError> {
    let corpora = cfg.load_corpora()?;
    let main = cfg.main_corpus(&corpora)?;
    let seeds: Vec<Prompt> = match &cfg.compose_seed_ids {
        Some(ids) => {
            let index = CorpusIndex::from_prompts(main);
            ids.iter()
                .map(|id| {
                    index
                        .get(id)
                        .cloned()
                        .ok_or_else(|| CliError::Config(format!("seed id {id} not found")))
                })
                .collect::<Result<_, _>>()?
        }
        None => main.iter().take(cfg.depth).cloned().collect(),
    };
    if seeds.len() < cfg.depth {
        return Err(CliError::Config(format!(
            "need {} seeds, corpus provides {}",
            cfg.depth,
            seeds.len()
        )));
    }
    let composed = with_backend(cfg, |backend| {
        let composer = Composer::new(&backend);
        if seeds.len() == 2 {
            composer
                .compose2(&seeds[0], ComposeTarget::Seed(&seeds[1]))
                .map_err(CliError::from_compose)
        } else {
            composer.spc(&seeds).map_err(CliError::from_compose)
        }
    })?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::Other(e.to_string()))?;
    let out_path = cfg.out_dir.join("composed.jsonl");
    corpus_write_composed(&out_path, std::slice::from_ref(&composed))?;
    log::info!("composed prompt written to {}", out_path.display());
    Ok(json!({
        "output": out_path,
        "id": composed.id,
        "depth": composed.depth,
        "ground_truth": composed.ground_truth,
        "text": composed.text,
    }))
}

fn corpus_write_composed(
    path: &Path,
    items: &[promptcomp::corpus::ComposedPrompt],
) -> Result<(), CliError> {
    use std::io::Write;
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    for item in items {
        let line = serde_json::to_string(item).expect("composed serializes");
        writeln!(file, "{line}").map_err(|e| CliError::Other(e.to_string()))?;
    }
    Ok(())
}

fn cmd_verify(cfg: &ResolvedConfig) -> Result<serde_json::Value, CliError> {
    let corpora = cfg.load_corpora()?;
    let input = cfg
        .verify_input
        .clone()
        .ok_or_else(|| CliError::Config("verify.input is required".into()))?;
    let items = corpus::load_composed(&input)?;
    let all: Vec<Prompt> = corpora.values().flatten().cloned().collect();
    let index = CorpusIndex::from_prompts(&all);
    let outcome = with_backend(cfg, |backend| {
        Ok(run_filter_chain(items, &index, &backend))
    })?;
    let kept_path = cfg.out_dir.join("verified.jsonl");
    corpus_write_composed(&kept_path, &outcome.kept)?;
    let report_path = cfg.out_dir.join("retention.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&outcome.report).expect("report") + "\n",
    )
    .map_err(|e| CliError::Other(e.to_string()))?;
    log::info!(
        "kept {} of {} items",
        outcome.kept.len(),
        outcome.report.input_count
    );
    if outcome.kept.is_empty() && outcome.report.input_count > 0 {
        return Err(CliError::EmptyDataset);
    }
    Ok(json!({
        "kept": outcome.kept.len(),
        "rejected": outcome.rejected.len(),
        "output": kept_path,
        "retention": report_path,
    }))
}

fn cmd_build(cfg: &ResolvedConfig) -> Result<serde_json::Value, CliError> {
    let corpora = cfg.load_corpora()?;
    let build: BuildConfig = cfg.build_config()?;
    let outcome = with_backend(cfg, |backend| {
        build_dataset(&build, &corpora, &backend).map_err(CliError::from_dataset)
    })?;
    let dataset_path = cfg.out_dir.join(format!("{}.jsonl", build.name));
    let mut items = outcome.dataset.clone();
    if cfg.include_rejected {
        items.extend(outcome.rejected.clone());
    }
    corpus::save_dataset(&outcome.manifest, &items, &dataset_path, cfg.include_rejected)?;
    let manifest_path = corpus::manifest_path(&dataset_path);
    log::info!(
        "dataset {} entries -> {}",
        outcome.manifest.entries,
        dataset_path.display()
    );
    if !outcome.complete {
        log::warn!("build incomplete: backend exhausted, checkpoint written");
    }
    if outcome.manifest.entries == 0 && outcome.manifest.retention.input_count > 0 {
        return Err(CliError::EmptyDataset);
    }
    Ok(json!({
        "dataset": dataset_path,
        "manifest": manifest_path,
        "entries": outcome.manifest.entries,
        "complete": outcome.complete,
        "retention": outcome.manifest.retention,
    }))
}

fn cmd_probe(cfg: &ResolvedConfig) -> Result<serde_json::Value, CliError> {
    let gateway: Gateway = cfg.build_gateway()?;
    let profile: DecodingProfile = cfg.probe_profile();
    let g = cfg.probe_g;
    let input = cfg
        .probe_dataset
        .clone()
        .ok_or_else(|| CliError::Config("probe.dataset is required".into()))?;

    // A probe target may be a composed dataset or a plain prompt corpus.
    let (results, report) = match corpus::load_composed(&input) {
        Ok(items) if !items.is_empty() => gateway
            .probe_dataset(&items, g, &profile)
            .map_err(CliError::from_gateway)?,
        _ => {
            let prompts = corpus::load_prompts(&input)?;
            gateway
                .probe_dataset(&prompts, g, &profile)
                .map_err(CliError::from_gateway)?
        }
    };
    let results_path = cfg.out_dir.join("probe-results.jsonl");
    {
        use std::io::Write;
        let mut file = std::fs::File::create(&results_path)
            .map_err(|e| CliError::Other(e.to_string()))?;
        for r in &results {
            writeln!(file, "{}", serde_json::to_string(r).expect("probe result"))
                .map_err(|e| CliError::Other(e.to_string()))?;
        }
    }
    let report_path = cfg.out_dir.join("probe-report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("report") + "\n",
    )
    .map_err(|e| CliError::Other(e.to_string()))?;
    let avg: f64 = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.avg_at_k).sum::<f64>() / results.len() as f64
    };
    log::info!(
        "probed {} prompts, avg@{g} = {avg:.4}, solve_all ratio = {:.4}",
        results.len(),
        report.solve_all_ratio
    );
    Ok(json!({
        "results": results_path,
        "report": report_path,
        "prompts": results.len(),
        "avg_at_k": avg,
        "solve_all_ratio": report.solve_all_ratio,
    }))
}

fn cmd_curriculum(cfg: &ResolvedConfig) -> Result<serde_json::Value, CliError> {
    let state_path = cfg
        .curriculum_state
        .clone()
        .ok_or_else(|| CliError::Config("curriculum.state is required".into()))?;
    let report_path = cfg
        .curriculum_probe_report
        .clone()
        .ok_or_else(|| CliError::Config("curriculum.probe_report is required".into()))?;
    let state: CurriculumState = read_json(&state_path)?;
    let report: BatchReport = read_json(&report_path)?;
    let before = state.stage_depth;
    let next = curriculum_advance(&state, &report).map_err(CliError::from_dataset)?;
    std::fs::write(
        &state_path,
        serde_json::to_string_pretty(&next).expect("state") + "\n",
    )
    .map_err(|e| CliError::Other(e.to_string()))?;
    log::info!(
        "curriculum depth {before} -> {} (dataset {})",
        next.stage_depth,
        next.current_dataset
    );
    Ok(json!({
        "state": state_path,
        "previous_depth": before,
        "stage_depth": next.stage_depth,
        "advanced": next.stage_depth > before,
        "current_dataset": next.current_dataset,
    }))
}

fn cmd_grpo_check(cfg: &ResolvedConfig) -> Result<serde_json::Value, CliError> {
    let results = run_self_check(cfg.seed);
    let mut all_pass = true;
    for check in &results {
        let status = if check.pass { "PASS" } else { "FAIL" };
        println!("{status} {name}: {detail}", name = check.name, detail = check.detail);
        all_pass &= check.pass;
    }
    if !all_pass {
        return Err(CliError::Other("invariant suite reported failures".into()));
    }
    Ok(serde_json::to_value(results).expect("check results"))
}

fn cmd_report(cfg: &ResolvedConfig) -> Result<serde_json::Value, CliError> {
    let manifest_path = cfg
        .report_manifest
        .clone()
        .ok_or_else(|| CliError::Config("report.manifest is required".into()))?;
    let manifest = corpus::load_manifest(&manifest_path)?;
    println!(
        "dataset {name}: {entries} entries, depth {depth}, seed {seed}, candidates {spec}",
        name = manifest.name,
        entries = manifest.entries,
        depth = manifest.depth,
        seed = manifest.build_seed,
        spec = manifest.candidate_spec,
    );
    println!("{:<12} {:>10} {:>10}", "stage", "kept", "dropped");
    println!("{:<12} {:>10} {:>10}", "input", manifest.retention.input_count, "-");
    for stage in &manifest.retention.stages {
        println!(
            "{:<12} {:>10} {:>10}",
            stage.stage, stage.kept, stage.dropped
        );
    }
    println!("telescopes: {}", manifest.retention.telescopes());
    Ok(serde_json::to_value(&manifest).expect("manifest"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&body).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
