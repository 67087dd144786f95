//! The six baseline confidence scorers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compute_geometry, EmbeddingSet};
use crate::model::{AggregatorOutput, EnsembleRecord};

/// Every method that produces a per-record confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    M1,
    M2,
    M3,
}

impl MethodId {
    pub const ALL: [MethodId; 9] = [
        MethodId::B1,
        MethodId::B2,
        MethodId::B3,
        MethodId::B4,
        MethodId::B5,
        MethodId::B6,
        MethodId::M1,
        MethodId::M2,
        MethodId::M3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::B1 => "B1",
            MethodId::B2 => "B2",
            MethodId::B3 => "B3",
            MethodId::B4 => "B4",
            MethodId::B5 => "B5",
            MethodId::B6 => "B6",
            MethodId::M1 => "M1",
            MethodId::M2 => "M2",
            MethodId::M3 => "M3",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            MethodId::B1 => "vote count",
            MethodId::B2 => "vote entropy",
            MethodId::B3 => "verbalized confidence",
            MethodId::B4 => "self-consistency entropy",
            MethodId::B5 => "embedding centroid",
            MethodId::B6 => "LLM aggregator",
            MethodId::M1 => "structure features + logistic regression",
            MethodId::M2 => "geometry features + logistic regression",
            MethodId::M3 => "all features + MLP",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Invalid(format!("unknown method `{s}`")))
    }
}

/// Extra model calls and tokens a method spends per record, beyond the
/// agents' own answers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CallCost {
    pub calls: u64,
    pub tokens: u64,
}

/// Confidences and correctness labels for one method over a record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: MethodId,
    pub ids: Vec<String>,
    pub confidences: Vec<f64>,
    pub correct: Vec<bool>,
    /// Records for which the score fell back or was excluded.
    #[serde(default)]
    pub flagged: Vec<String>,
    pub cost: CallCost,
    /// Why the method produced no scores on this record set, if it did not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl MethodScore {
    pub fn new(method: MethodId) -> Self {
        MethodScore {
            method,
            ids: Vec::new(),
            confidences: Vec::new(),
            correct: Vec::new(),
            flagged: Vec::new(),
            cost: CallCost::default(),
            skipped: None,
        }
    }

    pub fn push(&mut self, id: &str, confidence: f64, correct: bool) {
        self.ids.push(id.to_string());
        self.confidences.push(confidence);
        self.correct.push(correct);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Restricts to the given record positions.
    pub fn subset(&self, positions: &[usize]) -> Self {
        MethodScore {
            method: self.method,
            ids: positions.iter().map(|&i| self.ids[i].clone()).collect(),
            confidences: positions.iter().map(|&i| self.confidences[i]).collect(),
            correct: positions.iter().map(|&i| self.correct[i]).collect(),
            flagged: self.flagged.clone(),
            cost: self.cost,
            skipped: self.skipped.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteVariant {
    /// B1: majority share of K.
    Count,
    /// B2: one minus normalized answer entropy.
    Entropy,
    /// B4: same formula as B2 under its own method id.
    SelfConsistency,
}

/// Shannon entropy in bits of a count vector.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

/// Vote-derived confidence. The entropy variants use the distribution of
/// parsed answers, normalized by log2 of the answer-set size.
pub fn score_vote_based(record: &EnsembleRecord, variant: VoteVariant) -> Result<f64> {
    let choices = record.question.choice_count;
    if choices < 2 {
        return Err(Error::Invalid(format!(
            "record {}: answer set of size {choices}",
            record.question.id
        )));
    }
    match variant {
        VoteVariant::Count => Ok(record.vote_confidence),
        VoteVariant::Entropy | VoteVariant::SelfConsistency => {
            let mut tally: Vec<(&crate::model::Label, usize)> = Vec::new();
            for label in record.transcripts.iter().filter_map(|t| t.answer.as_ref()) {
                match tally.iter_mut().find(|(l, _)| *l == label) {
                    Some(e) => e.1 += 1,
                    None => tally.push((label, 1)),
                }
            }
            let counts: Vec<usize> = tally.into_iter().map(|(_, c)| c).collect();
            let h = entropy_bits(&counts);
            Ok((1.0 - h / (choices as f64).log2()).clamp(0.0, 1.0))
        }
    }
}

/// B3: mean verbalized confidence of the majority agents, if any reported one.
pub fn score_verbalized(record: &EnsembleRecord) -> Option<f64> {
    record.mean_majority_verbalized()
}

/// B5: one minus the cosine distance between majority and global centroids.
pub fn score_embed_centroid(record: &EnsembleRecord, embeddings: &EmbeddingSet) -> Result<f64> {
    let g = compute_geometry(embeddings, &record.majority_mask())?;
    Ok(centroid_confidence(g.majority_centrality))
}

/// B5 from an already computed majority centrality.
pub fn centroid_confidence(majority_centrality: f64) -> f64 {
    (1.0 - majority_centrality).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorScore {
    pub confidence: f64,
    /// Judged against the aggregator's own answer.
    pub correct: bool,
    pub flagged: bool,
}

/// B6: the aggregator's own confidence, scored against its own answer.
pub fn score_llm_aggregator(record: &EnsembleRecord, output: &AggregatorOutput) -> AggregatorScore {
    AggregatorScore {
        confidence: output.confidence.clamp(0.0, 1.0),
        correct: output.answer.matches(&record.question.gold),
        flagged: output.fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn record(answers: &[&str], choice_count: usize, gold: &str, verbalized: &[Option<f64>]) -> EnsembleRecord {
        let yes_no = answers.iter().all(|a| *a == "yes" || *a == "no");
        let question = QuestionRecord {
            id: "q".into(),
            benchmark: Benchmark::Mmlu,
            text: "?".into(),
            answer_format: if yes_no { AnswerFormat::YesNo } else { AnswerFormat::MultipleChoice },
            choices: vec![],
            choice_count,
            gold: Label::new(gold),
            provenance: None,
        };
        let ts = answers
            .iter()
            .enumerate()
            .map(|(i, a)| AgentTranscript {
                agent_index: i,
                role_name: "r".into(),
                model_id: "m".into(),
                reasoning: String::new(),
                answer: Some(Label::new(a)),
                verbalized_confidence: verbalized.get(i).copied().flatten(),
                prompt_tokens: 0,
                completion_tokens: 0,
            })
            .collect();
        EnsembleRecord::from_transcripts(question, ts).unwrap()
    }

    #[test]
    fn entropy_hand_values() {
        let unanimous = record(&["yes"; 5], 2, "yes", &[]);
        assert_eq!(score_vote_based(&unanimous, VoteVariant::Entropy).unwrap(), 1.0);

        // H(0.6, 0.4) = 0.97095 bits.
        let split = record(&["yes", "yes", "yes", "no", "no"], 2, "yes", &[]);
        let c = score_vote_based(&split, VoteVariant::Entropy).unwrap();
        let h = -(0.6f64 * 0.6f64.log2() + 0.4 * 0.4f64.log2());
        assert!((c - (1.0 - h)).abs() < 1e-12);
        assert!((c - 0.029).abs() < 5e-4);

        // H(0.4, 0.4, 0.2) = 1.52193 bits over |Y| = 4.
        let three_way = record(&["A", "A", "B", "B", "C"], 4, "A", &[]);
        let c = score_vote_based(&three_way, VoteVariant::SelfConsistency).unwrap();
        assert!((c - 0.239).abs() < 5e-4);
        assert_eq!(c, score_vote_based(&three_way, VoteVariant::Entropy).unwrap());
        assert_eq!(score_vote_based(&three_way, VoteVariant::Count).unwrap(), 0.4);
    }

    #[test]
    fn entropy_rejects_degenerate_answer_set() {
        let mut r = record(&["A"; 3], 4, "A", &[]);
        r.question.choice_count = 1;
        assert!(score_vote_based(&r, VoteVariant::Entropy).is_err());
    }

    #[test]
    fn verbalized_uses_majority_only() {
        let r = record(&["A", "A", "A"], 4, "A", &[Some(0.8), Some(0.8), Some(0.8)]);
        assert!((score_verbalized(&r).unwrap() - 0.8).abs() < 1e-12);
        let r = record(&["A", "A", "B"], 4, "A", &[Some(1.0), Some(0.5), Some(0.1)]);
        assert_eq!(score_verbalized(&r), Some(0.75));
        let r = record(&["A", "B", "C", "A", "A"], 4, "A", &[Some(0.9), Some(0.1), Some(0.1), None, None]);
        assert_eq!(score_verbalized(&r), Some(0.9));
        let r = record(&["A", "A"], 4, "A", &[None, None]);
        assert_eq!(score_verbalized(&r), None);
    }

    #[test]
    fn centroid_cases() {
        let r = record(&["A", "A", "B", "A", "B"], 4, "A", &[]);
        let same = EmbeddingSet::new(vec![vec![0.5, 0.5, 0.1]; 5], None).unwrap();
        assert!((score_embed_centroid(&r, &same).unwrap() - 1.0).abs() < 1e-12);

        let u = record(&["A"; 5], 4, "A", &[]);
        let cloud = EmbeddingSet::new((0..5).map(|i| vec![1.0, i as f64, -(i as f64)]).collect(), None).unwrap();
        assert!((score_embed_centroid(&u, &cloud).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregator_is_judged_on_its_own_answer() {
        let r = record(&["A", "A", "A", "B", "C"], 4, "A", &[]);
        let wrong = AggregatorOutput {
            answer: Label::new("B"),
            confidence: 0.9,
            raw: String::new(),
            fallback: false,
        };
        let s = score_llm_aggregator(&r, &wrong);
        assert!(!s.correct && r.correct);
        assert_eq!(s.confidence, 0.9);

        let right = AggregatorOutput { answer: Label::new("a"), ..wrong.clone() };
        assert!(score_llm_aggregator(&r, &right).correct);

        let fallback = AggregatorOutput { answer: r.majority_answer.clone(), confidence: 0.5, raw: String::new(), fallback: true };
        let s = score_llm_aggregator(&r, &fallback);
        assert!(s.flagged && s.confidence == 0.5);
    }

    #[test]
    fn method_ids_roundtrip() {
        for m in MethodId::ALL {
            assert_eq!(m.as_str().parse::<MethodId>().unwrap(), m);
        }
        assert!("B7".parse::<MethodId>().is_err());
    }
}
