//! Benchmark loaders. Sources are local JSON arrays or JSONL files; the
//! accepted field layouts are listed in `docs/sources.md`.

use std::fs;
use std::io::Write;
use std::path::Path;

use quorum_core::model::{AnswerFormat, Benchmark, Label, QuestionRecord};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use tracing::{info, warn};

use crate::error::{PipelineError, Result};

pub const DEFAULT_MMLU_SUBJECTS: [&str; 3] = ["logical_fallacies", "philosophy", "professional_medicine"];

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    /// MMLU subjects to keep; empty keeps every subject.
    pub mmlu_subjects: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            mmlu_subjects: DEFAULT_MMLU_SUBJECTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Rows of a JSON array or JSONL file, each with its 1-based position (the
/// line for JSONL, the element index for an array).
fn read_rows(path: &Path) -> Result<Vec<(usize, Map<String, Value>)>> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let source_err = |line: usize, message: String| PipelineError::Source {
        path: path.to_path_buf(),
        line,
        message,
    };
    let as_object = |line: usize, v: Value| match v {
        Value::Object(m) => Ok((line, m)),
        other => Err(source_err(line, format!("expected an object, found {other}"))),
    };
    if text.trim_start().starts_with('[') {
        let items: Vec<Value> = serde_json::from_str(&text).map_err(|e| source_err(e.line(), e.to_string()))?;
        return items.into_iter().enumerate().map(|(i, v)| as_object(i + 1, v)).collect();
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Value = serde_json::from_str(l).map_err(|e| source_err(i + 1, e.to_string()))?;
            as_object(i + 1, v)
        })
        .collect()
}

fn field<'a>(row: &'a Map<String, Value>, name: &str) -> std::result::Result<&'a Value, String> {
    row.get(name).filter(|v| !v.is_null()).ok_or_else(|| format!("missing field `{name}`"))
}

fn string_field(row: &Map<String, Value>, name: &str) -> std::result::Result<String, String> {
    match field(row, name)? {
        Value::String(s) => Ok(s.clone()),
        other => Err(format!("field `{name}` should be a string, found {other}")),
    }
}

fn string_list(v: &Value, name: &str) -> std::result::Result<Vec<String>, String> {
    v.as_array()
        .ok_or_else(|| format!("field `{name}` should be a list"))?
        .iter()
        .map(|c| match c {
            Value::String(s) => Ok(s.clone()),
            other => Ok(other.to_string()),
        })
        .collect()
}

fn optional_id(row: &Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| match row.get(*k) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    })
}

fn multiple_choice(id: String, benchmark: Benchmark, text: String, choices: Vec<String>, gold: usize, provenance: String) -> QuestionRecord {
    QuestionRecord {
        id,
        benchmark,
        text,
        answer_format: AnswerFormat::MultipleChoice,
        choice_count: choices.len(),
        choices,
        gold: Label::letter(gold),
        provenance: Some(provenance),
    }
}

fn strategyqa_row(row: &Map<String, Value>, line: usize, file: &str) -> std::result::Result<QuestionRecord, String> {
    let id = optional_id(row, &["qid", "id"]).unwrap_or_else(|| format!("strategyqa-{line}"));
    let answer = match field(row, "answer")? {
        Value::Bool(b) => *b,
        Value::String(s) if s.eq_ignore_ascii_case("true") || s.eq_ignore_ascii_case("yes") => true,
        Value::String(s) if s.eq_ignore_ascii_case("false") || s.eq_ignore_ascii_case("no") => false,
        other => return Err(format!("field `answer` should be a boolean, found {other}")),
    };
    Ok(QuestionRecord {
        id,
        benchmark: Benchmark::StrategyQa,
        text: string_field(row, "question")?,
        answer_format: AnswerFormat::YesNo,
        choices: Vec::new(),
        choice_count: 2,
        gold: if answer { Label::yes() } else { Label::no() },
        provenance: Some(file.to_string()),
    })
}

/// Index of an answer given as an integer, a digit string, or a letter.
fn answer_index(v: &Value, labels: Option<&[String]>) -> std::result::Result<usize, String> {
    if let Some(labels) = labels {
        let key = match v {
            Value::String(s) => s.trim().to_string(),
            other => other.to_string(),
        };
        return labels
            .iter()
            .position(|l| l.trim().eq_ignore_ascii_case(&key))
            .ok_or_else(|| format!("answer `{key}` is not one of the option labels {labels:?}"));
    }
    match v {
        Value::Number(n) => n.as_u64().map(|i| i as usize).ok_or_else(|| format!("answer index {n} is not a non-negative integer")),
        Value::String(s) => {
            let s = s.trim();
            if let Ok(i) = s.parse::<usize>() {
                return Ok(i);
            }
            Label::new(s).letter_index().ok_or_else(|| format!("answer `{s}` is neither an index nor a letter"))
        }
        other => Err(format!("unusable answer {other}")),
    }
}

fn mmlu_row(row: &Map<String, Value>, line: usize, file: &str) -> std::result::Result<QuestionRecord, String> {
    let subject = string_field(row, "subject")?;
    let choices = string_list(field(row, "choices")?, "choices")?;
    let gold = answer_index(field(row, "answer")?, None)?;
    if gold >= choices.len() {
        return Err(format!("answer index {gold} outside {} choices", choices.len()));
    }
    let split = optional_id(row, &["split"]).unwrap_or_else(|| "unspecified".into());
    let id = optional_id(row, &["id"]).unwrap_or_else(|| format!("mmlu-{subject}-{line}"));
    Ok(multiple_choice(
        id,
        Benchmark::Mmlu,
        string_field(row, "question")?,
        choices,
        gold,
        format!("{file}; subject={subject}; split={split}"),
    ))
}

fn truthfulqa_row(row: &Map<String, Value>, line: usize, file: &str) -> std::result::Result<QuestionRecord, String> {
    let targets = field(row, "mc1_targets")?;
    let (choices, labels): (Vec<String>, Vec<i64>) = match targets {
        // Hugging Face layout: {"choices": [...], "labels": [1, 0, ...]}
        Value::Object(m) if m.contains_key("choices") => {
            let choices = string_list(m.get("choices").unwrap(), "mc1_targets.choices")?;
            let labels = m
                .get("labels")
                .and_then(Value::as_array)
                .ok_or("missing field `mc1_targets.labels`")?
                .iter()
                .map(|l| l.as_i64().ok_or_else(|| format!("label {l} is not an integer")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            (choices, labels)
        }
        // Original layout: {"option text": 1, "other option": 0, ...} in source order.
        Value::Object(m) => m
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_i64().ok_or_else(|| format!("label {v} is not an integer"))?)))
            .collect::<std::result::Result<Vec<_>, String>>()?
            .into_iter()
            .unzip(),
        other => return Err(format!("field `mc1_targets` should be an object, found {other}")),
    };
    if choices.len() != labels.len() {
        return Err(format!("{} choices but {} labels", choices.len(), labels.len()));
    }
    let correct: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == 1).map(|(i, _)| i).collect();
    let [gold] = correct[..] else {
        return Err(format!("mc1_targets should mark exactly one true option, found {}", correct.len()));
    };
    let id = optional_id(row, &["id"]).unwrap_or_else(|| format!("truthfulqa-{line}"));
    Ok(multiple_choice(id, Benchmark::TruthfulQa, string_field(row, "question")?, choices, gold, file.to_string()))
}

fn arc_row(row: &Map<String, Value>, line: usize, file: &str) -> std::result::Result<QuestionRecord, String> {
    // Either {"question": "...", "choices": {"text": [...], "label": [...]}}
    // or {"question": {"stem": "...", "choices": [{"text", "label"}, ...]}}.
    let (text, choices, labels) = match field(row, "question")? {
        Value::String(stem) => {
            let c = field(row, "choices")?;
            let texts = string_list(c.get("text").ok_or("missing field `choices.text`")?, "choices.text")?;
            let labels = string_list(c.get("label").ok_or("missing field `choices.label`")?, "choices.label")?;
            (stem.clone(), texts, labels)
        }
        Value::Object(q) => {
            let stem = string_field(q, "stem")?;
            let items = field(q, "choices")?.as_array().ok_or("field `question.choices` should be a list")?;
            let mut texts = Vec::new();
            let mut labels = Vec::new();
            for item in items {
                let item = item.as_object().ok_or("choice should be an object")?;
                texts.push(string_field(item, "text")?);
                labels.push(string_field(item, "label")?);
            }
            (stem, texts, labels)
        }
        other => return Err(format!("field `question` has unusable value {other}")),
    };
    if choices.len() != labels.len() {
        return Err(format!("{} choices but {} labels", choices.len(), labels.len()));
    }
    let gold = answer_index(field(row, "answerKey")?, Some(&labels))?;
    let id = optional_id(row, &["id"]).unwrap_or_else(|| format!("arc-{line}"));
    Ok(multiple_choice(id, Benchmark::ArcChallenge, text, choices, gold, file.to_string()))
}

/// Loads one benchmark in source order. Rows of MMLU subjects outside
/// `opts.mmlu_subjects` are skipped.
pub fn load_benchmark(kind: Benchmark, path: &Path, opts: &IngestOptions) -> Result<Vec<QuestionRecord>> {
    let rows = read_rows(path)?;
    let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    if rows.is_empty() {
        warn!(benchmark = %kind, path = %path.display(), "source has no rows");
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(rows.len());
    let mut skipped = 0usize;
    for (line, row) in &rows {
        if kind == Benchmark::Mmlu && !opts.mmlu_subjects.is_empty() {
            if let Some(Value::String(subject)) = row.get("subject") {
                if !opts.mmlu_subjects.iter().any(|s| s == subject) {
                    skipped += 1;
                    continue;
                }
            }
        }
        let parsed = match kind {
            Benchmark::StrategyQa => strategyqa_row(row, *line, &file),
            Benchmark::Mmlu => mmlu_row(row, *line, &file),
            Benchmark::TruthfulQa => truthfulqa_row(row, *line, &file),
            Benchmark::ArcChallenge => arc_row(row, *line, &file),
        };
        let record = parsed
            .and_then(|r| r.validate().map(|_| r).map_err(|e| e.to_string()))
            .map_err(|message| PipelineError::Source {
                path: path.to_path_buf(),
                line: *line,
                message,
            })?;
        out.push(record);
    }
    info!(benchmark = %kind, records = out.len(), skipped, "loaded benchmark");
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    f.write_all(&buf).map_err(|e| PipelineError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Source {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(kind: Benchmark, body: &str) -> Result<Vec<QuestionRecord>> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("src.jsonl");
        fs::write(&path, body).unwrap();
        load_benchmark(kind, &path, &IngestOptions::default())
    }

    #[test]
    fn strategyqa_rows() {
        let recs = load(
            Benchmark::StrategyQa,
            "{\"qid\":\"a1\",\"question\":\"Is water wet?\",\"answer\":true}\n\n{\"qid\":\"a2\",\"question\":\"Q?\",\"answer\":false}\n",
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].gold, Label::yes());
        assert_eq!(recs[1].gold, Label::no());
        assert_eq!(recs[0].answer_format, AnswerFormat::YesNo);
        assert_eq!(recs[0].id, "a1");
    }

    #[test]
    fn missing_gold_names_the_line() {
        let err = load(
            Benchmark::StrategyQa,
            "{\"qid\":\"a1\",\"question\":\"Q\",\"answer\":true}\n{\"qid\":\"a2\",\"question\":\"Q\"}\n",
        )
        .unwrap_err();
        match err {
            PipelineError::Source { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("answer"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_empty_list() {
        assert!(load(Benchmark::Mmlu, "").unwrap().is_empty());
        assert!(load(Benchmark::Mmlu, "[]").unwrap().is_empty());
    }

    #[test]
    fn mmlu_filters_subjects_and_accepts_letters() {
        let body = concat!(
            "{\"subject\":\"philosophy\",\"question\":\"Q1\",\"choices\":[\"a\",\"b\",\"c\",\"d\"],\"answer\":2,\"split\":\"test\"}\n",
            "{\"subject\":\"astronomy\",\"question\":\"Q2\",\"choices\":[\"a\",\"b\"],\"answer\":0}\n",
            "{\"subject\":\"logical_fallacies\",\"question\":\"Q3\",\"choices\":[\"a\",\"b\",\"c\"],\"answer\":\"B\"}\n",
        );
        let recs = load(Benchmark::Mmlu, body).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].gold, Label::letter(2));
        assert!(recs[0].provenance.as_deref().unwrap().contains("split=test"));
        assert_eq!(recs[1].gold, Label::letter(1));
        assert_eq!(recs[1].choice_count, 3);
    }

    #[test]
    fn truthfulqa_both_layouts_keep_source_order() {
        let hf = "{\"question\":\"Q\",\"mc1_targets\":{\"choices\":[\"x\",\"y\",\"z\"],\"labels\":[0,1,0]}}\n";
        let orig = "{\"question\":\"Q\",\"mc1_targets\":{\"z\":0,\"x\":0,\"y\":1}}\n";
        let a = load(Benchmark::TruthfulQa, hf).unwrap();
        assert_eq!(a[0].gold, Label::letter(1));
        let b = load(Benchmark::TruthfulQa, orig).unwrap();
        assert_eq!(b[0].choices, vec!["z", "x", "y"]);
        assert_eq!(b[0].gold, Label::letter(2));
    }

    #[test]
    fn truthfulqa_needs_one_true_option() {
        assert!(load(Benchmark::TruthfulQa, "{\"question\":\"Q\",\"mc1_targets\":{\"a\":1,\"b\":1}}\n").is_err());
    }

    #[test]
    fn arc_digit_and_letter_keys() {
        let digits = "{\"id\":\"x\",\"question\":\"Q\",\"choices\":{\"text\":[\"p\",\"q\",\"r\"],\"label\":[\"1\",\"2\",\"3\"]},\"answerKey\":\"3\"}\n";
        let nested = "[{\"id\":\"y\",\"question\":{\"stem\":\"Q\",\"choices\":[{\"text\":\"p\",\"label\":\"A\"},{\"text\":\"q\",\"label\":\"B\"}]},\"answerKey\":\"B\"}]";
        assert_eq!(load(Benchmark::ArcChallenge, digits).unwrap()[0].gold, Label::letter(2));
        let recs = load(Benchmark::ArcChallenge, nested).unwrap();
        assert_eq!(recs[0].gold, Label::letter(1));
        assert_eq!(recs[0].text, "Q");
    }

    #[test]
    fn loading_is_idempotent() {
        let body = "{\"qid\":\"a1\",\"question\":\"Q\",\"answer\":true}\n";
        assert_eq!(load(Benchmark::StrategyQa, body).unwrap(), load(Benchmark::StrategyQa, body).unwrap());
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out/q.jsonl");
        let recs = load(Benchmark::StrategyQa, "{\"qid\":\"a1\",\"question\":\"Q\",\"answer\":true}\n").unwrap();
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(read_jsonl::<QuestionRecord>(&path).unwrap(), recs);
    }
}
