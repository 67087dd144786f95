#![allow(dead_code)]

use std::fs;
use std::path::Path;

use quorum_core::baselines::MethodId;
use quorum_pipeline::config::RunConfig;

/// Writes `n` StrategyQA-style and `n` MMLU-style questions under `dir`.
pub fn write_questions(dir: &Path, n: usize) {
    let mut sqa = String::new();
    for i in 0..n {
        sqa += &serde_json::json!({
            "qid": format!("sqa-{i:03}"),
            "question": format!("Would item {i} of the survey outlast a century of weather?"),
            "answer": i % 3 != 0,
        })
        .to_string();
        sqa.push('\n');
    }
    fs::write(dir.join("sqa.jsonl"), sqa).unwrap();
    let subjects = ["logical_fallacies", "philosophy", "professional_medicine"];
    let mut mmlu = String::new();
    for i in 0..n {
        mmlu += &serde_json::json!({
            "subject": subjects[i % 3],
            "question": format!("Which reading of passage {i} holds up best?"),
            "choices": [format!("first {i}"), format!("second {i}"), format!("third {i}"), format!("fourth {i}")],
            "answer": (i * 7) % 4,
        })
        .to_string();
        mmlu.push('\n');
    }
    fs::write(dir.join("mmlu.jsonl"), mmlu).unwrap();
}

/// Mock-backed config over the questions in `data`, writing to `out`.
/// `extra` is appended verbatim to the TOML.
pub fn mock_config(data: &Path, out: &Path, extra: &str) -> RunConfig {
    let text = format!(
        r#"
seed = 42
output_dir = "{out}"
benchmarks = [
  {{ kind = "strategyqa", path = "{data}/sqa.jsonl" }},
  {{ kind = "mmlu", path = "{data}/mmlu.jsonl" }},
]
{extra}
"#,
        out = out.display(),
        data = data.display(),
    );
    let mut cfg = RunConfig::from_toml(&text, Path::new("/")).unwrap();
    cfg.mock_dir = Some(data.to_path_buf());
    cfg
}

/// Analyses trimmed to what the tests look at, to keep them quick.
pub const FAST_ANALYSES: &str = r#"
[analyses]
ablation = false
cross_benchmark = true
bootstrap_resamples = 100
"#;

pub fn all_methods() -> Vec<MethodId> {
    MethodId::ALL.to_vec()
}
