//! Prompt templates. The built-in text lives in `assets/prompts/`; a run can
//! point at a directory with replacement files of the same names.

use std::fs;
use std::path::Path;

use quorum_core::model::{AnswerFormat, EnsembleRecord, QuestionRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::ChatMessage;
use crate::error::{PipelineError, Result};

/// Characters of each agent response the aggregator sees.
pub const AGGREGATOR_TRUNCATION: usize = 1200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Role {
    pub name: String,
    pub system_prompt: String,
}

pub const ROLE_NAMES: [&str; 5] = [
    "Analytical Reasoner",
    "Devil's Advocate",
    "Knowledge-Focused",
    "Intuitive Responder",
    "Systematic Verifier",
];

const ROLE_FILES: [(&str, &str); 5] = [
    ("role_analytical.txt", include_str!("../assets/prompts/role_analytical.txt")),
    ("role_devils_advocate.txt", include_str!("../assets/prompts/role_devils_advocate.txt")),
    ("role_knowledge.txt", include_str!("../assets/prompts/role_knowledge.txt")),
    ("role_intuitive.txt", include_str!("../assets/prompts/role_intuitive.txt")),
    ("role_verifier.txt", include_str!("../assets/prompts/role_verifier.txt")),
];

/// The five built-in roles in agent-index order.
pub fn default_roles() -> Vec<Role> {
    ROLE_NAMES
        .iter()
        .zip(ROLE_FILES)
        .map(|(name, (_, text))| Role {
            name: name.to_string(),
            system_prompt: text.trim().to_string(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub agent_user: String,
    pub verbalized: String,
    pub structure: String,
    pub aggregator_system: String,
    pub aggregator: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            agent_user: include_str!("../assets/prompts/agent_user.txt").to_string(),
            verbalized: include_str!("../assets/prompts/verbalized.txt").trim().to_string(),
            structure: include_str!("../assets/prompts/structure.txt").to_string(),
            aggregator_system: include_str!("../assets/prompts/aggregator_system.txt").trim().to_string(),
            aggregator: include_str!("../assets/prompts/aggregator.txt").to_string(),
        }
    }
}

/// Short content hash used to version a template.
pub fn template_version(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..6])
}

impl PromptSet {
    /// Built-in templates with any same-named files in `dir` substituted.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut set = PromptSet::default();
        let slots: [(&str, &mut String, bool); 5] = [
            ("agent_user.txt", &mut set.agent_user, false),
            ("verbalized.txt", &mut set.verbalized, true),
            ("structure.txt", &mut set.structure, false),
            ("aggregator_system.txt", &mut set.aggregator_system, true),
            ("aggregator.txt", &mut set.aggregator, false),
        ];
        for (name, slot, trim) in slots {
            let path = dir.join(name);
            match fs::read_to_string(&path) {
                Ok(text) => *slot = if trim { text.trim().to_string() } else { text },
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(PipelineError::io(path, e)),
            }
        }
        Ok(set)
    }

    pub fn agent_version(&self) -> String {
        template_version(&self.agent_user)
    }

    pub fn verbalized_version(&self) -> String {
        template_version(&format!("{}\n{}", self.agent_user, self.verbalized))
    }

    pub fn structure_version(&self) -> String {
        template_version(&self.structure)
    }

    pub fn aggregator_version(&self) -> String {
        template_version(&format!("{}\n{}", self.aggregator_system, self.aggregator))
    }

    pub fn agent_messages(&self, role: &Role, question: &QuestionRecord) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(&role.system_prompt),
            ChatMessage::user(self.agent_prompt(question)),
        ]
    }

    fn agent_prompt(&self, question: &QuestionRecord) -> String {
        fill(
            &self.agent_user,
            &[
                ("question", &question.text),
                ("options", &options_block(question)),
                ("answer_hint", &answer_hint(question)),
            ],
        )
    }

    /// The agent's own conversation followed by the confidence question.
    pub fn verbalized_messages(&self, role: &Role, question: &QuestionRecord, reasoning: &str) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(&role.system_prompt),
            ChatMessage::user(self.agent_prompt(question)),
            ChatMessage::assistant(reasoning),
            ChatMessage::user(&self.verbalized),
        ]
    }

    pub fn structure_messages(&self, record: &EnsembleRecord) -> Vec<ChatMessage> {
        let mask = record.majority_mask();
        let mut majority = format!("MAJORITY (answer {}):\n", record.majority_answer);
        let mut minority = String::from("MINORITY:\n");
        for (t, &in_majority) in record.transcripts.iter().zip(&mask) {
            let answer = t.answer.as_ref().map_or("unparsed".to_string(), |a| a.to_string());
            if in_majority {
                majority.push_str(&format!("Agent {} ({}):\n{}\n\n", t.agent_index + 1, t.role_name, t.reasoning.trim()));
            } else {
                minority.push_str(&format!(
                    "Agent {} ({}, answer {answer}):\n{}\n\n",
                    t.agent_index + 1,
                    t.role_name,
                    t.reasoning.trim()
                ));
            }
        }
        let agents = format!("{majority}{minority}");
        vec![ChatMessage::user(fill(
            &self.structure,
            &[
                ("question", &record.question.text),
                ("options", &options_block(&record.question)),
                ("agents", &agents),
            ],
        ))]
    }

    pub fn aggregator_messages(&self, record: &EnsembleRecord) -> Vec<ChatMessage> {
        let mut responses = String::new();
        for t in &record.transcripts {
            responses.push_str(&format!(
                "Agent {} response:\n{}\n\n",
                t.agent_index + 1,
                truncate_chars(&t.reasoning, AGGREGATOR_TRUNCATION)
            ));
        }
        vec![
            ChatMessage::system(&self.aggregator_system),
            ChatMessage::user(fill(
                &self.aggregator,
                &[
                    ("question", &record.question.text),
                    ("options", &options_block(&record.question)),
                    ("responses", &responses),
                    ("answer_hint", &answer_hint(&record.question)),
                ],
            )),
        ]
    }
}

/// First `n` characters (not bytes) of `text`.
pub fn truncate_chars(text: &str, n: usize) -> &str {
    match text.char_indices().nth(n) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

fn options_block(q: &QuestionRecord) -> String {
    match q.answer_format {
        AnswerFormat::YesNo => String::new(),
        AnswerFormat::MultipleChoice => q
            .choices
            .iter()
            .enumerate()
            .map(|(i, c)| format!("({}) {c}\n", (b'A' + i as u8) as char))
            .collect(),
    }
}

fn answer_hint(q: &QuestionRecord) -> String {
    match q.answer_format {
        AnswerFormat::YesNo => "yes or no".into(),
        AnswerFormat::MultipleChoice => {
            let letters: Vec<String> = (0..q.choice_count).map(|i| ((b'A' + i as u8) as char).to_string()).collect();
            let (last, rest) = letters.split_last().expect("at least two options");
            format!("{} or {last}", rest.join(", "))
        }
    }
}

/// Replaces `{name}` placeholders in one pass, so substituted text is never
/// rescanned. Unknown braces are left alone.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start + 1..];
        let hit = values.iter().find(|(name, _)| tail.starts_with(name) && tail[name.len()..].starts_with('}'));
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &tail[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use quorum_core::model::{AgentTranscript, Benchmark, Label};

    fn mc_question() -> QuestionRecord {
        QuestionRecord {
            id: "q".into(),
            benchmark: Benchmark::Mmlu,
            text: "Which {options} one?".into(),
            answer_format: AnswerFormat::MultipleChoice,
            choices: vec!["red".into(), "green".into(), "blue".into()],
            choice_count: 3,
            gold: Label::letter(1),
            provenance: None,
        }
    }

    fn record(reasoning: &[&str], answers: &[&str]) -> EnsembleRecord {
        let transcripts = reasoning
            .iter()
            .zip(answers)
            .enumerate()
            .map(|(i, (r, a))| AgentTranscript {
                agent_index: i,
                role_name: ROLE_NAMES[i].into(),
                model_id: "m".into(),
                reasoning: r.to_string(),
                answer: Some(Label::new(a)),
                verbalized_confidence: None,
                prompt_tokens: 0,
                completion_tokens: 0,
            })
            .collect();
        EnsembleRecord::from_transcripts(mc_question(), transcripts).unwrap()
    }

    #[test]
    fn devils_advocate_role_text() {
        let roles = default_roles();
        assert_eq!(roles.len(), 5);
        assert_eq!(roles[1].name, "Devil's Advocate");
        assert!(roles[1].system_prompt.starts_with("You are a critical thinker who always considers why the obvious answer"));
    }

    #[test]
    fn fill_does_not_rescan_values() {
        let msgs = PromptSet::default().agent_messages(&default_roles()[0], &mc_question());
        let user = &msgs[1].content;
        assert!(user.contains("Which {options} one?"));
        assert!(user.contains("(B) green"));
        assert!(user.contains("A, B or C"));
    }

    #[test]
    fn aggregator_truncates_each_response() {
        let long: String = "é".repeat(5000);
        let rec = record(&[&long, "short", "x", "y", "z"], &["A", "A", "B", "A", "C"]);
        let msgs = PromptSet::default().aggregator_messages(&rec);
        assert_eq!(msgs[0].role, "system");
        assert_eq!(msgs[0].content, "You are a JSON-only responder.");
        let user = &msgs[1].content;
        let expected = format!("Agent 1 response:\n{}\n\n", "é".repeat(1200));
        assert!(user.contains(&expected));
        assert!(!user.contains(&"é".repeat(1201)));
        assert!(user.contains("\"answer\": \"A, B or C\""));
    }

    #[test]
    fn structure_prompt_groups_agents() {
        let rec = record(&["r1", "r2", "r3", "r4", "r5"], &["A", "A", "B", "A", "C"]);
        let text = &PromptSet::default().structure_messages(&rec)[0].content;
        let maj = text.find("MAJORITY (answer A)").unwrap();
        let min = text.find("MINORITY:").unwrap();
        assert!(maj < min);
        let agent3 = text.find("Agent 3 (").unwrap();
        assert!(agent3 > min);
        assert!(text.contains("answer B"));
        assert!(text.contains("divergence_depth"));
    }

    #[test]
    fn versions_track_template_text() {
        let a = PromptSet::default();
        let mut b = a.clone();
        b.structure.push('!');
        assert_eq!(a.agent_version(), b.agent_version());
        assert_ne!(a.structure_version(), b.structure_version());
    }

    #[test]
    fn truncation_counts_characters() {
        assert_eq!(truncate_chars("abc", 5), "abc");
        assert_eq!(truncate_chars("añbc", 2), "añ");
    }
}
