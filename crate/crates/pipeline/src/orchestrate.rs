//! Every model interaction: the agents, the confidence follow-up, the
//! structure analysis and the aggregator. All calls go through the cache.

use std::sync::Arc;

use futures::future::join_all;
use quorum_core::model::{AgentTranscript, AggregatorOutput, EnsembleRecord, QuestionRecord, StructureFeatures};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::client::{CachedChat, ChatMessage, ChatReply, ChatRequest};
use crate::config::{ResolvedAgent, TeamConfig};
use crate::error::{PipelineError, Result};
use crate::parse::{parse_aggregator, parse_answer, parse_confidence, parse_structure};
use crate::prompts::PromptSet;

const CONFIDENCE_NUDGE: &str = "Reply with only an integer from 0 to 100.";
const JSON_NUDGE: &str = "That reply was not a valid JSON object with every requested key. Respond with only the JSON object.";

/// Calls made and tokens spent by one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTally {
    pub calls: u64,
    pub tokens: u64,
}

impl CallTally {
    fn add(&mut self, reply: &ChatReply) {
        self.calls += 1;
        self.tokens += reply.tokens();
    }

    fn merge(&mut self, other: CallTally) {
        self.calls += other.calls;
        self.tokens += other.tokens;
    }
}

/// Only an exhausted retry budget is absorbed; auth, protocol and local
/// errors end the run.
fn recoverable(e: &PipelineError) -> bool {
    matches!(e, PipelineError::Exhausted { .. })
}

pub struct Orchestrator {
    chat: Arc<CachedChat>,
    prompts: PromptSet,
    agents: Vec<ResolvedAgent>,
    team: TeamConfig,
}

impl Orchestrator {
    pub fn new(chat: Arc<CachedChat>, prompts: PromptSet, team: TeamConfig) -> Result<Self> {
        let agents = team.resolve_agents()?;
        Ok(Orchestrator {
            chat,
            prompts,
            agents,
            team,
        })
    }

    pub fn agents(&self) -> &[ResolvedAgent] {
        &self.agents
    }

    pub fn chat(&self) -> &CachedChat {
        &self.chat
    }

    async fn ask(&self, tag: &str, model: &str, messages: Vec<ChatMessage>, temperature: f64, max_tokens: u32) -> Result<ChatReply> {
        let request = ChatRequest {
            model: model.to_string(),
            messages,
            temperature,
            max_tokens,
        };
        self.chat.complete(tag, &request).await
    }

    /// Queries every agent independently; transcripts come back in agent
    /// order. An agent whose retries run out gets an empty transcript with
    /// no answer.
    pub async fn run_agents(&self, question: &QuestionRecord) -> Result<Vec<AgentTranscript>> {
        let tag = format!("agent/{}", self.prompts.agent_version());
        let calls = self.agents.iter().enumerate().map(|(i, agent)| {
            let tag = tag.clone();
            async move {
                let messages = self.prompts.agent_messages(&agent.role, question);
                let reply = self
                    .ask(&tag, &agent.model_id, messages, self.team.agent_temperature, self.team.agent_max_tokens)
                    .await;
                let reply = match reply {
                    Ok(r) => r,
                    Err(e) if recoverable(&e) => {
                        warn!(question = %question.id, agent = i, "agent call failed: {e}");
                        ChatReply::default()
                    }
                    Err(e) => return Err(e),
                };
                Ok(AgentTranscript {
                    agent_index: i,
                    role_name: agent.role.name.clone(),
                    model_id: agent.model_id.clone(),
                    answer: parse_answer(&reply.content, question.answer_format, question.choice_count),
                    reasoning: reply.content,
                    verbalized_confidence: None,
                    prompt_tokens: reply.prompt_tokens,
                    completion_tokens: reply.completion_tokens,
                })
            }
        });
        join_all(calls).await.into_iter().collect()
    }

    /// One follow-up asking the agent for a 0-100 confidence, with one
    /// retry. `None` when both replies are unreadable.
    pub async fn elicit_verbalized_confidence(&self, question: &QuestionRecord, transcript: &AgentTranscript) -> Result<(Option<f64>, CallTally)> {
        let mut tally = CallTally::default();
        if transcript.answer.is_none() {
            return Ok((None, tally));
        }
        let agent = &self.agents[transcript.agent_index];
        let tag = format!("verbalized/{}", self.prompts.verbalized_version());
        let mut messages = self.prompts.verbalized_messages(&agent.role, question, &transcript.reasoning);
        for attempt in 0..2 {
            let reply = match self
                .ask(&tag, &transcript.model_id, messages.clone(), self.team.analysis_temperature, self.team.verbalized_max_tokens)
                .await
            {
                Ok(r) => r,
                Err(e) if recoverable(&e) => {
                    warn!(question = %question.id, agent = transcript.agent_index, "confidence call failed: {e}");
                    return Ok((None, tally));
                }
                Err(e) => return Err(e),
            };
            tally.add(&reply);
            if let Some(c) = parse_confidence(&reply.content) {
                return Ok((Some(c), tally));
            }
            if attempt == 0 {
                messages.push(ChatMessage::assistant(reply.content));
                messages.push(ChatMessage::user(CONFIDENCE_NUDGE));
            }
        }
        warn!(question = %question.id, agent = transcript.agent_index, "no readable confidence after retry");
        Ok((None, tally))
    }

    /// Confidence follow-ups for every agent of a record, in agent order.
    pub async fn verbalized_for_record(&self, record: &EnsembleRecord) -> Result<(Vec<Option<f64>>, CallTally)> {
        let results = join_all(
            record
                .transcripts
                .iter()
                .map(|t| self.elicit_verbalized_confidence(&record.question, t)),
        )
        .await;
        let mut tally = CallTally::default();
        let mut values = Vec::with_capacity(results.len());
        for r in results {
            let (v, t) = r?;
            values.push(v);
            tally.merge(t);
        }
        Ok((values, tally))
    }

    /// Unanimous records get the default scores without a call. Otherwise
    /// one temperature-0 call, one retry, then the parse-fallback defaults.
    pub async fn analyze_structure(&self, record: &EnsembleRecord) -> Result<(StructureFeatures, CallTally)> {
        let mut tally = CallTally::default();
        if record.is_unanimous() {
            return Ok((StructureFeatures::unanimous_default(), tally));
        }
        let tag = format!("structure/{}", self.prompts.structure_version());
        let mut messages = self.prompts.structure_messages(record);
        for attempt in 0..2 {
            let reply = match self
                .ask(&tag, self.team.analysis_model(), messages.clone(), self.team.analysis_temperature, self.team.analysis_max_tokens)
                .await
            {
                Ok(r) => r,
                Err(e) if recoverable(&e) => {
                    warn!(question = %record.question.id, "structure call failed: {e}");
                    break;
                }
                Err(e) => return Err(e),
            };
            tally.add(&reply);
            if let Some(s) = parse_structure(&reply.content) {
                return Ok((s, tally));
            }
            if attempt == 0 {
                messages.push(ChatMessage::assistant(reply.content));
                messages.push(ChatMessage::user(JSON_NUDGE));
            }
        }
        warn!(question = %record.question.id, "structure analysis unreadable; using fallback scores");
        Ok((StructureFeatures::parse_fallback(), tally))
    }

    /// Single aggregator call over the truncated agent responses. After a
    /// failed retry the majority answer with confidence 0.5 stands in,
    /// flagged as a fallback.
    pub async fn llm_aggregate(&self, record: &EnsembleRecord) -> Result<(AggregatorOutput, CallTally)> {
        let mut tally = CallTally::default();
        let tag = format!("aggregate/{}", self.prompts.aggregator_version());
        let mut messages = self.prompts.aggregator_messages(record);
        let mut last_raw = String::new();
        for attempt in 0..2 {
            let reply = match self
                .ask(&tag, self.team.analysis_model(), messages.clone(), self.team.analysis_temperature, self.team.aggregator_max_tokens)
                .await
            {
                Ok(r) => r,
                Err(e) if recoverable(&e) => {
                    warn!(question = %record.question.id, "aggregator call failed: {e}");
                    break;
                }
                Err(e) => return Err(e),
            };
            tally.add(&reply);
            if let Some((answer, confidence)) = parse_aggregator(&reply.content, &record.question) {
                return Ok((
                    AggregatorOutput {
                        answer,
                        confidence,
                        raw: reply.content,
                        fallback: false,
                    },
                    tally,
                ));
            }
            last_raw = reply.content.clone();
            if attempt == 0 {
                messages.push(ChatMessage::assistant(reply.content));
                messages.push(ChatMessage::user(JSON_NUDGE));
            }
        }
        warn!(question = %record.question.id, "aggregator reply unreadable; using the majority answer");
        Ok((
            AggregatorOutput {
                answer: record.majority_answer.clone(),
                confidence: 0.5,
                raw: last_raw,
                fallback: true,
            },
            tally,
        ))
    }
}
