//! Deterministic stand-in for a model server. It knows every question's
//! gold answer and fakes agents, the confidence follow-up, the structure
//! analysis, the aggregator and embeddings, with outcomes drawn from hashes
//! of the request so that reruns agree byte for byte.
//!
//! The analysis replies carry real signal: a majority that is wrong tends
//! to get lower evidence overlap, a stronger minority and earlier
//! divergence.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use async_trait::async_trait;
use quorum_core::model::{AnswerFormat, Label, QuestionRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::{ChatBackend, ChatReply, ChatRequest, EmbeddingBackend};
use crate::error::{PipelineError, Result};
use crate::parse::parse_answer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub seed: u64,
    /// Agent accuracy on the easiest and the hardest question.
    pub easy_accuracy: f64,
    pub hard_accuracy: f64,
    /// Per-model shift of agent accuracy, by model id.
    pub model_skill: HashMap<String, f64>,
    /// Noise added to each structure score.
    pub analysis_noise: f64,
    pub embedding_dim: usize,
    /// Spread of reasoning embeddings around their answer's direction.
    pub embedding_noise: f64,
    /// Probability that the aggregator reply is not valid JSON.
    pub aggregator_garbage_rate: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            seed: 42,
            easy_accuracy: 0.95,
            hard_accuracy: 0.35,
            model_skill: HashMap::new(),
            analysis_noise: 0.25,
            embedding_dim: 16,
            embedding_noise: 0.6,
            aggregator_garbage_rate: 0.0,
        }
    }
}

impl SimulatorConfig {
    /// `simulator.toml` from `dir`, or the defaults when absent.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("simulator.toml");
        match fs::read_to_string(&path) {
            Ok(text) => toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(SimulatorConfig::default()),
            Err(e) => Err(PipelineError::io(path, e)),
        }
    }

    pub fn identity(&self) -> String {
        let mut skills: Vec<_> = self.model_skill.iter().collect();
        skills.sort_by(|a, b| a.0.cmp(b.0));
        format!(
            "mock:{}:{}:{}:{:?}:{}:{}:{}:{}",
            self.seed,
            self.easy_accuracy,
            self.hard_accuracy,
            skills,
            self.analysis_noise,
            self.embedding_dim,
            self.embedding_noise,
            self.aggregator_garbage_rate
        )
    }
}

const WORDS: [&str; 24] = [
    "record", "source", "period", "context", "definition", "example", "principle", "measure", "claim", "premise",
    "pattern", "history", "evidence", "scope", "detail", "exception", "factor", "condition", "result", "account",
    "assumption", "case", "structure", "trend",
];

pub struct Simulator {
    config: SimulatorConfig,
    questions: HashMap<String, QuestionRecord>,
}

/// Uniform draw in [0, 1) from a hash of the seed and `parts`.
fn unit(seed: u64, parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().unwrap());
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Standard normal draw (Box-Muller) from two hashed uniforms.
fn normal(seed: u64, parts: &[&str], salt: &str) -> f64 {
    let mut a = parts.to_vec();
    a.push(salt);
    a.push("u1");
    let u1 = unit(seed, &a).max(1e-300);
    a.pop();
    a.push("u2");
    let u2 = unit(seed, &a);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

fn line_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    let start = text.find(marker)? + marker.len();
    Some(text[start..].lines().next().unwrap_or("").trim())
}

impl Simulator {
    pub fn new(config: SimulatorConfig, questions: &[QuestionRecord]) -> Self {
        let mut map = HashMap::new();
        for q in questions {
            map.entry(q.text.trim().to_string()).or_insert_with(|| q.clone());
        }
        Simulator { config, questions: map }
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.config
    }

    fn question_in(&self, text: &str) -> Result<&QuestionRecord> {
        let line = line_after(text, "Question: ").ok_or_else(|| PipelineError::Mock("request has no `Question:` line".into()))?;
        self.questions
            .get(line)
            .ok_or_else(|| PipelineError::Mock(format!("unknown question `{line}`")))
    }

    fn u(&self, parts: &[&str]) -> f64 {
        unit(self.config.seed, parts)
    }

    /// Skewed toward easy questions, as on real benchmarks.
    fn difficulty(&self, q: &QuestionRecord) -> f64 {
        self.u(&["difficulty", &q.id]).powf(2.5)
    }

    fn wrong_label(&self, q: &QuestionRecord, parts: &[&str]) -> Label {
        let others: Vec<Label> = q.answer_set().into_iter().filter(|l| !l.matches(&q.gold)).collect();
        // Wrong answers favour one distractor per question so that errors cluster.
        let favoured = (self.u(&["distractor", &q.id]) * others.len() as f64) as usize;
        let mut p = parts.to_vec();
        p.push("which-wrong");
        let i = if self.u(&p) < 0.6 {
            favoured
        } else {
            (self.u(&[&p[..], &["spread"]].concat()) * others.len() as f64) as usize
        };
        others[i.min(others.len() - 1)].clone()
    }

    fn agent_reply(&self, request: &ChatRequest) -> Result<String> {
        let system = &request.messages[0].content;
        let user = &request.messages[1].content;
        let q = self.question_in(user)?;
        let skill = self.config.model_skill.get(&request.model).copied().unwrap_or(0.0);
        let d = self.difficulty(q);
        let p = (self.config.easy_accuracy + (self.config.hard_accuracy - self.config.easy_accuracy) * d + skill).clamp(0.0, 1.0);
        let parts = [q.id.as_str(), system.as_str(), request.model.as_str()];
        let correct = self.u(&[&parts[..], &["correct"]].concat()) < p;
        let answer = if correct { q.gold.clone() } else { self.wrong_label(q, &parts) };
        let mut body = String::new();
        let sentences = 2 + (self.u(&[&parts[..], &["len"]].concat()) * 4.0) as usize;
        for s in 0..sentences {
            let idx = |tag: &str| (self.u(&[&parts[..], &[tag, &s.to_string()]].concat()) * WORDS.len() as f64) as usize;
            body.push_str(&format!(
                "The {} and the {} bear on this {}. ",
                WORDS[idx("a")],
                WORDS[idx("b")],
                WORDS[idx("c")]
            ));
        }
        let shown = match q.answer_format {
            AnswerFormat::YesNo => answer.to_string(),
            AnswerFormat::MultipleChoice => format!("({answer})"),
        };
        Ok(format!("{body}\nAnswer: {shown}"))
    }

    fn verbalized_reply(&self, request: &ChatRequest) -> Result<String> {
        let q = self.question_in(&request.messages[1].content)?;
        let reasoning = &request.messages[2].content;
        let answer = parse_answer(reasoning, q.answer_format, q.choice_count);
        let right = answer.as_ref().is_some_and(|a| a.matches(&q.gold));
        let parts = [q.id.as_str(), reasoning.as_str()];
        // Overconfident and only weakly tied to correctness.
        let base = if right { 86.0 } else { 81.0 };
        let value = (base + 9.0 * normal(self.config.seed, &parts, "verbal")).round().clamp(0.0, 100.0);
        Ok(match (self.u(&[&parts[..], &["style"]].concat()) * 3.0) as usize {
            0 => format!("{value}"),
            1 => format!("I'd put it at {value} out of 100."),
            _ => format!("Confidence: {value}%"),
        })
    }

    fn structure_reply(&self, request: &ChatRequest) -> Result<String> {
        let text = &request.messages.last().unwrap().content;
        let q = self.question_in(text)?;
        let majority = line_after(text, "MAJORITY (answer ")
            .map(|s| s.trim_end_matches("):"))
            .ok_or_else(|| PipelineError::Mock("analysis request without a majority block".into()))?;
        let majority_right = Label::new(majority).matches(&q.gold);
        let parts = [q.id.as_str(), majority];
        let noise = self.config.analysis_noise;
        let s = if majority_right { 1.0 } else { -1.0 };
        let d = self.difficulty(q);
        let score = |centre: f64, tag: &str| (centre + noise * normal(self.config.seed, &parts, tag)).clamp(0.0, 1.0);
        let overlap = score(0.55 + 0.15 * s, "overlap");
        let new_info = score(0.45 - 0.12 * s, "new");
        let strength = score(0.45 - 0.15 * s, "strength");
        let conf = score(0.6 + 0.1 * s, "conf");
        let cplx = score(0.3 + 0.5 * d, "cplx");
        let r = self.u(&[&parts[..], &["depth"]].concat());
        let depth = match (majority_right, r) {
            (true, r) if r < 0.2 => "early",
            (true, r) if r < 0.45 => "middle",
            (true, _) => "late",
            (false, r) if r < 0.45 => "early",
            (false, r) if r < 0.8 => "middle",
            (false, _) => "late",
        };
        Ok(format!(
            "{{\"evidence_overlap\": {overlap:.3}, \"minority_new_info\": {new_info:.3}, \"minority_strength\": {strength:.3}, \"majority_conf_language\": {conf:.3}, \"reasoning_complexity\": {cplx:.3}, \"divergence_depth\": \"{depth}\"}}"
        ))
    }

    fn aggregator_reply(&self, request: &ChatRequest) -> Result<String> {
        let text = &request.messages.last().unwrap().content;
        let q = self.question_in(text)?;
        let mut counts: Vec<(Label, usize)> = Vec::new();
        for block in text.split("response:\n").skip(1) {
            let block = block.split("\n\nAgent ").next().unwrap_or(block);
            if let Some(a) = parse_answer(block, q.answer_format, q.choice_count) {
                match counts.iter_mut().find(|(l, _)| *l == a) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((a, 1)),
                }
            }
        }
        let parts = [q.id.as_str(), "aggregate"];
        if self.u(&[&parts[..], &["garbage"]].concat()) < self.config.aggregator_garbage_rate {
            return Ok("I think the agents mostly agree.".into());
        }
        let total: usize = counts.iter().map(|(_, c)| c).sum();
        let (top, top_count) = counts
            .iter()
            .max_by_key(|(_, c)| *c)
            .cloned()
            .unwrap_or((q.answer_set()[0].clone(), 0));
        // Occasionally overrules a split vote in favour of the gold answer.
        let answer = if top_count * 5 < total * 4 && self.u(&[&parts[..], &["overrule"]].concat()) < 0.25 {
            q.gold.clone()
        } else {
            top
        };
        let share = if total == 0 { 0.5 } else { top_count as f64 / total as f64 };
        let conf = (0.5 + 0.45 * share + 0.05 * normal(self.config.seed, &parts, "conf")).clamp(0.0, 1.0);
        Ok(format!("{{\"answer\": \"{answer}\", \"confidence\": {conf:.2}}}"))
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let dim = self.config.embedding_dim;
        // Texts ending in the same answer share a direction, so agents that
        // agree cluster together.
        let answer = text.rsplit("Answer:").next().map(str::trim).unwrap_or("");
        let anchor = [answer];
        let noise = self.config.embedding_noise;
        (0..dim)
            .map(|i| {
                let i = i.to_string();
                normal(self.config.seed, &anchor, &format!("dir{i}")) + noise * normal(self.config.seed, &[text], &format!("n{i}"))
            })
            .collect()
    }
}

#[async_trait]
impl ChatBackend for Simulator {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatReply> {
        let first = request.messages.first().ok_or_else(|| PipelineError::Mock("empty message list".into()))?;
        let last = &request.messages.last().unwrap().content;
        let content = if first.role == "system" && first.content.contains("JSON-only") {
            self.aggregator_reply(request)?
        } else if last.contains("MAJORITY (answer ") {
            self.structure_reply(request)?
        } else if request.messages.len() >= 4 {
            self.verbalized_reply(request)?
        } else if request.messages.len() == 2 {
            self.agent_reply(request)?
        } else {
            return Err(PipelineError::Mock("unrecognized request shape".into()));
        };
        let prompt: u64 = request.messages.iter().map(|m| word_count(&m.content)).sum();
        Ok(ChatReply {
            completion_tokens: word_count(&content),
            prompt_tokens: prompt,
            content,
        })
    }
}

#[async_trait]
impl EmbeddingBackend for Simulator {
    async fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Embeddings read from a JSONL file of `{"text": ..., "embedding": [...]}`.
pub struct FixtureEmbeddings {
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct FixtureRow {
    text: String,
    embedding: Vec<f64>,
}

impl FixtureEmbeddings {
    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<FixtureRow> = crate::ingest::read_jsonl(path)?;
        Ok(FixtureEmbeddings {
            vectors: rows.into_iter().map(|r| (r.text, r.embedding)).collect(),
        })
    }
}

#[async_trait]
impl EmbeddingBackend for FixtureEmbeddings {
    async fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(t)
                    .cloned()
                    .ok_or_else(|| PipelineError::Mock(format!("no fixture embedding for text starting `{}`", t.chars().take(40).collect::<String>())))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::ChatMessage;
    use quorum_core::model::Benchmark;

    fn question() -> QuestionRecord {
        QuestionRecord {
            id: "q7".into(),
            benchmark: Benchmark::StrategyQa,
            text: "Is the sky green?".into(),
            answer_format: AnswerFormat::YesNo,
            choices: Vec::new(),
            choice_count: 2,
            gold: Label::no(),
            provenance: None,
        }
    }

    fn agent_request(model: &str) -> ChatRequest {
        ChatRequest {
            model: model.into(),
            messages: vec![
                ChatMessage::system("You are careful."),
                ChatMessage::user("Question: Is the sky green?\n\nReason step by step."),
            ],
            temperature: 0.7,
            max_tokens: 800,
        }
    }

    #[tokio::test]
    async fn replies_are_deterministic_and_parseable() {
        let sim = Simulator::new(SimulatorConfig::default(), &[question()]);
        let a = sim.complete(&agent_request("m")).await.unwrap();
        let b = sim.complete(&agent_request("m")).await.unwrap();
        assert_eq!(a, b);
        assert!(parse_answer(&a.content, AnswerFormat::YesNo, 2).is_some());
        assert!(a.prompt_tokens > 0 && a.completion_tokens > 0);
    }

    #[tokio::test]
    async fn accuracy_follows_configuration() {
        let qs: Vec<QuestionRecord> = (0..300)
            .map(|i| QuestionRecord {
                id: format!("q{i}"),
                text: format!("Question number {i}?"),
                ..question()
            })
            .collect();
        let cfg = SimulatorConfig {
            easy_accuracy: 0.9,
            hard_accuracy: 0.9,
            ..SimulatorConfig::default()
        };
        let sim = Simulator::new(cfg, &qs);
        let mut right = 0;
        for q in &qs {
            let mut req = agent_request("m");
            req.messages[1].content = format!("Question: {}\n", q.text);
            let reply = sim.complete(&req).await.unwrap();
            right += usize::from(parse_answer(&reply.content, AnswerFormat::YesNo, 2) == Some(q.gold.clone()));
        }
        let rate = right as f64 / qs.len() as f64;
        assert!((rate - 0.9).abs() < 0.06, "{rate}");
    }

    #[tokio::test]
    async fn unknown_question_is_an_error() {
        let sim = Simulator::new(SimulatorConfig::default(), &[]);
        assert!(sim.complete(&agent_request("m")).await.is_err());
    }

    #[tokio::test]
    async fn fixture_embeddings_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let v: Vec<f64> = (0..16).map(|i| i as f64).collect();
        fs::write(&path, format!("{}\n", serde_json::json!({"text": "hello", "embedding": v}))).unwrap();
        let fx = FixtureEmbeddings::load(&path).unwrap();
        assert_eq!(fx.embed("e", &["hello".into()]).await.unwrap(), vec![v]);
        assert!(fx.embed("e", &["other".into()]).await.is_err());
    }
}
