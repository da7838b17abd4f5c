//! End-to-end tests of the binary: exit codes, summaries, and output files.

use promptcomp::composer::template;
use promptcomp::corpus::save_prompts;
use std::path::Path;
use std::process::Output;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_promptcomp")
}

fn run(args: &[&str]) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_corpus(dir: &Path, n: usize, seed: u64) -> std::path::PathBuf {
    let corpus = template::generate_corpus(n, seed);
    let path = dir.join("corpus.jsonl");
    save_prompts(&path, &corpus).unwrap();
    path
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn summary(dir: &Path, command: &str) -> serde_json::Value {
    let path = dir.join("out").join(format!("{command}-summary.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn build_dataset_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 30, 1);
    let config = write_config(
        dir.path(),
        &format!(
            r#"
seed = 7
backend = "template"
depth = 2
out = "{out}"

[corpora]
main = "{corpus}"

[build]
name = "demo"
rand_size = 4
"#,
            out = dir.path().join("out").display(),
            corpus = corpus.display()
        ),
    );
    let output = run(&["build-dataset", "--config", config.to_str().unwrap()]);
    assert!(output.status.success(), "{output:?}");
    let dataset = dir.path().join("out/demo.jsonl");
    let manifest = dir.path().join("out/demo.manifest.json");
    assert!(dataset.exists() && manifest.exists());
    let s = summary(dir.path(), "build-dataset");
    assert_eq!(s["ok"], true);
    assert!(s["result"]["entries"].as_u64().unwrap() > 0);

    // report on the manifest prints the retention table.
    let report_config = write_config(
        dir.path(),
        &format!(
            "out = \"{out}\"\n[report]\nmanifest = \"{manifest}\"\n",
            out = dir.path().join("out").display(),
            manifest = manifest.display()
        ),
    );
    let report = run(&["report", "--config", report_config.to_str().unwrap()]);
    assert!(report.status.success());
    let stdout = String::from_utf8_lossy(&report.stdout);
    assert!(stdout.contains("stage1"));
    assert!(stdout.contains("telescopes: true"));
}

#[test]
fn identical_configs_build_identical_bytes() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for dir in [&dir_a, &dir_b] {
        let corpus = write_corpus(dir.path(), 25, 9);
        let config = write_config(
            dir.path(),
            &format!(
                "seed = 3\nbackend = \"template\"\ndepth = 2\nout = \"{out}\"\n[corpora]\nmain = \"{corpus}\"\n[build]\nname = \"d\"\nrand_size = 5\n",
                out = dir.path().join("out").display(),
                corpus = corpus.display()
            ),
        );
        let output = run(&["build-dataset", "--config", config.to_str().unwrap()]);
        assert!(output.status.success());
        outputs.push((
            std::fs::read(dir.path().join("out/d.jsonl")).unwrap(),
            std::fs::read(dir.path().join("out/d.manifest.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0);
    assert_eq!(outputs[0].1, outputs[1].1);
}

#[test]
fn probe_with_unreachable_endpoint_exits_3_with_gateway_error_in_summary() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 5, 2);
    let config = write_config(
        dir.path(),
        &format!(
            r#"
out = "{out}"
[corpora]
main = "{corpus}"
[probe]
dataset = "{corpus}"
g = 2
[gateway]
endpoint = "http://127.0.0.1:9"
model = "none"
[gateway.retry]
attempts = 1
backoff_ms = 1
"#,
            out = dir.path().join("out").display(),
            corpus = corpus.display()
        ),
    );
    let output = run(&["probe", "--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(3), "{output:?}");
    let s = summary(dir.path(), "probe");
    assert_eq!(s["ok"], false);
    assert!(s["error"].as_str().unwrap().contains("backend error"));
}

#[test]
fn missing_config_file_exits_2() {
    let output = run(&["build-dataset", "--config", "/nonexistent/config.toml"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_flag_exits_2() {
    let output = run(&["build-dataset", "--no-such-flag"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn verify_all_rejected_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = write_corpus(dir.path(), 6, 3);

    // Compose two items and corrupt their claimed values before verifying.
    let corpus = template::generate_corpus(6, 3);
    let backend = template::TemplateBackend::new();
    let composer = promptcomp::composer::Composer::new(&backend);
    let mut items = Vec::new();
    for pair in corpus.chunks(2).take(2) {
        let mut item = composer
            .compose2(&pair[0], promptcomp::composer::ComposeTarget::Seed(&pair[1]))
            .unwrap();
        item.steps[0].v1 = promptcomp::answer::AnswerValue::int(31337);
        items.push(item);
    }
    let input = dir.path().join("broken.jsonl");
    {
        use std::io::Write;
        let mut f = std::fs::File::create(&input).unwrap();
        for item in &items {
            writeln!(f, "{}", serde_json::to_string(item).unwrap()).unwrap();
        }
    }
    let config = write_config(
        dir.path(),
        &format!(
            "out = \"{out}\"\nbackend = \"template\"\n[corpora]\nmain = \"{corpus}\"\n[verify]\ninput = \"{input}\"\n",
            out = dir.path().join("out").display(),
            corpus = corpus_path.display(),
            input = input.display()
        ),
    );
    let output = run(&["verify", "--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(4), "{output:?}");
}

#[test]
fn grpo_check_prints_a_line_per_property() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &format!("seed = 11\nout = \"{}\"\n", dir.path().join("out").display()),
    );
    let output = run(&["grpo-check", "--config", config.to_str().unwrap()]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    let pass_lines = stdout.lines().filter(|l| l.starts_with("PASS ")).count();
    assert!(pass_lines >= 8, "got {pass_lines} PASS lines:\n{stdout}");
    assert!(!stdout.contains("FAIL "));
}

#[test]
fn compose_and_curriculum_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 10, 4);
    let config = write_config(
        dir.path(),
        &format!(
            "seed = 1\nbackend = \"template\"\ndepth = 3\nout = \"{out}\"\n[corpora]\nmain = \"{corpus}\"\n",
            out = dir.path().join("out").display(),
            corpus = corpus.display()
        ),
    );
    let output = run(&["compose", "--config", config.to_str().unwrap()]);
    assert!(output.status.success(), "{output:?}");
    let s = summary(dir.path(), "compose");
    assert_eq!(s["result"]["depth"], 3);

    // Curriculum: a saturated probe advances depth 1 -> 2.
    let state_path = dir.path().join("state.json");
    let state = serde_json::json!({
        "stage_depth": 1,
        "trigger": {"solve_all_threshold": 0.6, "window": 1},
        "history": [],
        "current_dataset": "depth1.jsonl",
        "stage_datasets": {"1": "depth1.jsonl", "2": "depth2.jsonl"}
    });
    std::fs::write(&state_path, state.to_string()).unwrap();
    let report_path = dir.path().join("probe-report.json");
    let report = serde_json::json!({
        "oversampled": 100, "kept": 20, "solve_all": 75, "solve_none": 5,
        "solve_all_ratio": 0.75, "pass_rate_histogram": {}
    });
    std::fs::write(&report_path, report.to_string()).unwrap();
    let config = write_config(
        dir.path(),
        &format!(
            "out = \"{out}\"\n[curriculum]\nstate = \"{state}\"\nprobe_report = \"{report}\"\n",
            out = dir.path().join("out").display(),
            state = state_path.display(),
            report = report_path.display()
        ),
    );
    let output = run(&["curriculum", "--config", config.to_str().unwrap()]);
    assert!(output.status.success(), "{output:?}");
    let s = summary(dir.path(), "curriculum");
    assert_eq!(s["result"]["advanced"], true);
    assert_eq!(s["result"]["stage_depth"], 2);
    assert_eq!(s["result"]["current_dataset"], "depth2.jsonl");
}
