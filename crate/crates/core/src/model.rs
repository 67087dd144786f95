//! Domain records shared by every stage, plus the vote arithmetic.
//!
//! Records serialize to one JSON object per line; the field names here are
//! the contract between pipeline stages.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source benchmark of a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Benchmark {
    #[serde(rename = "strategyqa")]
    StrategyQa,
    #[serde(rename = "mmlu")]
    Mmlu,
    #[serde(rename = "truthfulqa")]
    TruthfulQa,
    #[serde(rename = "arc_challenge")]
    ArcChallenge,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::StrategyQa,
        Benchmark::Mmlu,
        Benchmark::TruthfulQa,
        Benchmark::ArcChallenge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::StrategyQa => "strategyqa",
            Benchmark::Mmlu => "mmlu",
            Benchmark::TruthfulQa => "truthfulqa",
            Benchmark::ArcChallenge => "arc_challenge",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "strategyqa" => Ok(Benchmark::StrategyQa),
            "mmlu" => Ok(Benchmark::Mmlu),
            "truthfulqa" => Ok(Benchmark::TruthfulQa),
            "arc_challenge" | "arc" => Ok(Benchmark::ArcChallenge),
            other => Err(Error::Invalid(format!("unknown benchmark `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    YesNo,
    MultipleChoice,
}

/// A closed-form answer label in canonical form: `yes`/`no` lowercase,
/// option letters uppercase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    /// Canonicalizes a raw label: trim, strip surrounding punctuation, then
    /// uppercase single letters and lowercase everything else.
    pub fn new(raw: &str) -> Self {
        let key = normalize_label(raw);
        if key.chars().count() == 1 && key.chars().all(|c| c.is_ascii_alphabetic()) {
            Label(key.to_ascii_uppercase())
        } else {
            Label(key)
        }
    }

    pub fn yes() -> Self {
        Label("yes".into())
    }

    pub fn no() -> Self {
        Label("no".into())
    }

    /// Option letter for a zero-based choice index (`0 -> A`).
    pub fn letter(index: usize) -> Self {
        assert!(index < 26, "option index {index} out of letter range");
        Label(((b'A' + index as u8) as char).to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Zero-based position of a letter label, if it is one.
    pub fn letter_index(&self) -> Option<usize> {
        let mut chars = self.0.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_uppercase() => Some((c as u8 - b'A') as usize),
            _ => None,
        }
    }

    pub fn matches(&self, other: &Label) -> bool {
        normalize_label(&self.0) == normalize_label(&other.0)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Comparison key for labels: trimmed, lowercased, surrounding punctuation removed.
pub fn normalize_label(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub benchmark: Benchmark,
    pub text: String,
    pub answer_format: AnswerFormat,
    pub choices: Vec<String>,
    pub choice_count: usize,
    pub gold: Label,
    /// Where the row came from (file, split, subject); informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl QuestionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.choice_count < 2 {
            return Err(Error::Invalid(format!(
                "question {}: choice_count {} < 2",
                self.id, self.choice_count
            )));
        }
        match self.answer_format {
            AnswerFormat::YesNo => {
                if self.choice_count != 2 {
                    return Err(Error::Invalid(format!(
                        "question {}: yes/no question with choice_count {}",
                        self.id, self.choice_count
                    )));
                }
                if self.gold != Label::yes() && self.gold != Label::no() {
                    return Err(Error::Invalid(format!(
                        "question {}: yes/no gold label `{}`",
                        self.id, self.gold
                    )));
                }
            }
            AnswerFormat::MultipleChoice => {
                if self.choice_count > 26 {
                    return Err(Error::Invalid(format!(
                        "question {}: {} options exceed the letter range",
                        self.id, self.choice_count
                    )));
                }
                match self.gold.letter_index() {
                    Some(i) if i < self.choice_count => {}
                    _ => {
                        return Err(Error::Invalid(format!(
                            "question {}: gold `{}` outside the first {} letters",
                            self.id, self.gold, self.choice_count
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// All labels an agent may answer with.
    pub fn answer_set(&self) -> Vec<Label> {
        match self.answer_format {
            AnswerFormat::YesNo => vec![Label::yes(), Label::no()],
            AnswerFormat::MultipleChoice => (0..self.choice_count).map(Label::letter).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub agent_index: usize,
    pub role_name: String,
    pub model_id: String,
    pub reasoning: String,
    /// `None` marks a parse failure (or an agent whose call failed outright).
    pub answer: Option<Label>,
    #[serde(default)]
    pub verbalized_confidence: Option<f64>,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

/// Agreement tier of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Unanimous,
    Strong,
    Weak,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Unanimous, Tier::Strong, Tier::Weak];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Unanimous => "unanimous",
            Tier::Strong => "strong",
            Tier::Weak => "weak",
        }
    }
}

const TIER_EPS: f64 = 1e-12;

/// Maps a vote confidence in (0, 1] to its tier. Unanimity is checked first.
pub fn tier_of(c_vote: f64) -> Tier {
    if c_vote >= 1.0 - TIER_EPS {
        Tier::Unanimous
    } else if c_vote >= 0.8 - TIER_EPS {
        Tier::Strong
    } else {
        Tier::Weak
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub majority: Label,
    pub majority_count: usize,
    pub c_vote: f64,
    pub tie: bool,
}

/// Plurality vote over K agent answers; `None` entries are parse failures.
///
/// Failures stay in the denominator. Ties go to the label held by the lowest
/// agent index.
pub fn majority_vote(answers: &[Option<Label>]) -> Result<Vote> {
    if answers.is_empty() {
        return Err(Error::Empty("majority_vote needs at least one answer"));
    }
    // (label, count) in order of first appearance, which is the tie-break order.
    let mut tally: Vec<(&Label, usize)> = Vec::new();
    for label in answers.iter().flatten() {
        match tally.iter_mut().find(|(l, _)| *l == label) {
            Some(entry) => entry.1 += 1,
            None => tally.push((label, 1)),
        }
    }
    let top = tally
        .iter()
        .map(|&(_, c)| c)
        .max()
        .ok_or(Error::Abstain(answers.len()))?;
    let holders = tally.iter().filter(|&&(_, c)| c == top).count();
    let (majority, _) = tally.iter().find(|&&(_, c)| c == top).expect("top exists");
    Ok(Vote {
        majority: (*majority).clone(),
        majority_count: top,
        c_vote: top as f64 / answers.len() as f64,
        tie: holders >= 2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub question: QuestionRecord,
    pub transcripts: Vec<AgentTranscript>,
    pub majority_answer: Label,
    pub vote_confidence: f64,
    pub tie: bool,
    pub correct: bool,
    pub tier: Tier,
}

impl EnsembleRecord {
    /// Votes over the transcripts and labels the majority against gold.
    pub fn from_transcripts(
        question: QuestionRecord,
        transcripts: Vec<AgentTranscript>,
    ) -> Result<Self> {
        let answers: Vec<Option<Label>> = transcripts.iter().map(|t| t.answer.clone()).collect();
        let vote = majority_vote(&answers)?;
        let correct = vote.majority.matches(&question.gold);
        Ok(EnsembleRecord {
            question,
            transcripts,
            majority_answer: vote.majority,
            vote_confidence: vote.c_vote,
            tie: vote.tie,
            correct,
            tier: tier_of(vote.c_vote),
        })
    }

    pub fn k(&self) -> usize {
        self.transcripts.len()
    }

    pub fn is_unanimous(&self) -> bool {
        self.tier == Tier::Unanimous
    }

    /// `true` for agents whose answer equals the majority label.
    pub fn majority_mask(&self) -> Vec<bool> {
        self.transcripts
            .iter()
            .map(|t| t.answer.as_ref() == Some(&self.majority_answer))
            .collect()
    }

    /// Keeps the first `n` agents and recomputes the vote from that subset.
    pub fn subset(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.k() {
            return Err(Error::Invalid(format!(
                "agent subset of size {n} from a team of {}",
                self.k()
            )));
        }
        Self::from_transcripts(self.question.clone(), self.transcripts[..n].to_vec())
    }

    /// Mean verbalized confidence over majority agents that reported one.
    pub fn mean_majority_verbalized(&self) -> Option<f64> {
        let values: Vec<f64> = self
            .transcripts
            .iter()
            .filter(|t| t.answer.as_ref() == Some(&self.majority_answer))
            .filter_map(|t| t.verbalized_confidence)
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

/// True iff the majority answer equals gold under label normalization.
pub fn label_correctness(record: &EnsembleRecord) -> bool {
    record.majority_answer.matches(&record.question.gold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceDepth {
    Early,
    Middle,
    Late,
    None,
}

impl DivergenceDepth {
    pub fn parse(raw: &str) -> Option<Self> {
        match normalize_label(raw).as_str() {
            "early" => Some(Self::Early),
            "middle" | "mid" | "intermediate" => Some(Self::Middle),
            "late" => Some(Self::Late),
            "none" => Some(Self::None),
            _ => None,
        }
    }

    /// (early, middle, late) indicators.
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            Self::Early => [1.0, 0.0, 0.0],
            Self::Middle => [0.0, 1.0, 0.0],
            Self::Late => [0.0, 0.0, 1.0],
            Self::None => [0.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureSource {
    LlmAnalysis,
    UnanimousDefault,
    ParseFallback,
}

/// The six disagreement scores produced by the structure analysis pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureFeatures {
    pub evidence_overlap: f64,
    pub minority_new_info: f64,
    pub minority_strength: f64,
    pub majority_conf_language: f64,
    pub reasoning_complexity: f64,
    pub divergence_depth: DivergenceDepth,
    pub source: StructureSource,
}

impl StructureFeatures {
    /// Values assigned without an LLM call when all agents agree.
    pub fn unanimous_default() -> Self {
        StructureFeatures {
            evidence_overlap: 1.0,
            minority_new_info: 0.0,
            minority_strength: 0.0,
            majority_conf_language: 1.0,
            reasoning_complexity: 0.0,
            divergence_depth: DivergenceDepth::None,
            source: StructureSource::UnanimousDefault,
        }
    }

    pub fn parse_fallback() -> Self {
        StructureFeatures {
            source: StructureSource::ParseFallback,
            ..Self::unanimous_default()
        }
    }

    /// LLM-produced scores, clamped into [0, 1]. Non-finite scores become 0.
    pub fn from_scores(scores: [f64; 5], depth: DivergenceDepth) -> Self {
        let c = |x: f64| if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
        StructureFeatures {
            evidence_overlap: c(scores[0]),
            minority_new_info: c(scores[1]),
            minority_strength: c(scores[2]),
            majority_conf_language: c(scores[3]),
            reasoning_complexity: c(scores[4]),
            divergence_depth: depth,
            source: StructureSource::LlmAnalysis,
        }
    }

    pub fn scores(&self) -> [f64; 5] {
        [
            self.evidence_overlap,
            self.minority_new_info,
            self.minority_strength,
            self.majority_conf_language,
            self.reasoning_complexity,
        ]
    }
}

/// Cosine-geometry summary of the agents' reasoning embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryFeatures {
    pub overall_dispersion: f64,
    pub majority_cohesion: f64,
    pub cluster_distance: f64,
    pub minority_outlier_degree: f64,
    pub majority_centrality: f64,
    pub minority_cohesion: f64,
    pub pca_variance_ratio: f64,
}

impl GeometryFeatures {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.overall_dispersion,
            self.majority_cohesion,
            self.cluster_distance,
            self.minority_outlier_degree,
            self.majority_centrality,
            self.minority_cohesion,
            self.pca_variance_ratio,
        ]
    }
}

/// Answer and confidence returned by the single-call aggregator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorOutput {
    pub answer: Label,
    pub confidence: f64,
    pub raw: String,
    /// Set when the reply could not be parsed and the majority answer with
    /// confidence 0.5 was substituted.
    #[serde(default)]
    pub fallback: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(raw: &[&str]) -> Vec<Option<Label>> {
        raw.iter()
            .map(|s| if s.is_empty() { None } else { Some(Label::new(s)) })
            .collect()
    }

    #[test]
    fn three_to_two_vote() {
        let v = majority_vote(&labels(&["yes", "yes", "yes", "no", "no"])).unwrap();
        assert_eq!(v.majority, Label::yes());
        assert_eq!(v.c_vote, 0.6);
        assert!(!v.tie);
    }

    #[test]
    fn unanimous_vote() {
        let v = majority_vote(&labels(&["A"; 5])).unwrap();
        assert_eq!(v.majority, Label::new("A"));
        assert_eq!(v.c_vote, 1.0);
        assert!(!v.tie);
    }

    #[test]
    fn two_way_tie_goes_to_lowest_index() {
        let v = majority_vote(&labels(&["A", "A", "B", "B", "C"])).unwrap();
        assert_eq!(v.majority, Label::new("A"));
        assert_eq!(v.c_vote, 0.4);
        assert!(v.tie);

        let v = majority_vote(&labels(&["C", "B", "B", "A", "A"])).unwrap();
        assert_eq!(v.majority, Label::new("B"));
        assert!(v.tie);
    }

    #[test]
    fn parse_failures_stay_in_denominator() {
        let v = majority_vote(&labels(&["yes", "", "yes", "", "no"])).unwrap();
        assert_eq!(v.majority, Label::yes());
        assert_eq!(v.c_vote, 0.4);
    }

    #[test]
    fn all_failures_abstain() {
        assert!(matches!(
            majority_vote(&labels(&["", "", ""])),
            Err(Error::Abstain(3))
        ));
    }

    #[test]
    fn tiers() {
        assert_eq!(tier_of(1.0), Tier::Unanimous);
        assert_eq!(tier_of(0.8), Tier::Strong);
        assert_eq!(tier_of(4.0 / 5.0), Tier::Strong);
        assert_eq!(tier_of(0.9), Tier::Strong);
        assert_eq!(tier_of(0.6), Tier::Weak);
        assert_eq!(tier_of(0.2), Tier::Weak);
    }

    #[test]
    fn label_normalization() {
        assert_eq!(Label::new(" b) "), Label::new("B"));
        assert_eq!(Label::new("Yes."), Label::yes());
        assert!(Label::new("B").matches(&Label::new("b")));
        assert!(!Label::new("A").matches(&Label::new("C")));
        assert_eq!(Label::letter(2).letter_index(), Some(2));
    }

    fn question(gold: &str) -> QuestionRecord {
        QuestionRecord {
            id: "q".into(),
            benchmark: Benchmark::Mmlu,
            text: "?".into(),
            answer_format: AnswerFormat::MultipleChoice,
            choices: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            choice_count: 4,
            gold: Label::new(gold),
            provenance: None,
        }
    }

    fn transcript(i: usize, answer: &str) -> AgentTranscript {
        AgentTranscript {
            agent_index: i,
            role_name: "r".into(),
            model_id: "m".into(),
            reasoning: String::new(),
            answer: Some(Label::new(answer)),
            verbalized_confidence: None,
            prompt_tokens: 0,
            completion_tokens: 0,
        }
    }

    #[test]
    fn correctness_labels() {
        let rec = |maj: &str, gold: &str| {
            let ts = (0..3).map(|i| transcript(i, maj)).collect();
            EnsembleRecord::from_transcripts(question(gold), ts).unwrap()
        };
        assert!(label_correctness(&rec("B", "b")));
        assert!(!label_correctness(&rec("A", "C")));
        let mut yes = rec("A", "A");
        yes.question.answer_format = AnswerFormat::YesNo;
        yes.question.gold = Label::yes();
        yes.majority_answer = Label::yes();
        assert!(label_correctness(&yes));
    }

    #[test]
    fn question_invariants() {
        assert!(question("D").validate().is_ok());
        assert!(question("E").validate().is_err());
        let mut yn = question("A");
        yn.answer_format = AnswerFormat::YesNo;
        yn.choice_count = 2;
        assert!(yn.validate().is_err());
        yn.gold = Label::no();
        assert!(yn.validate().is_ok());
    }

    #[test]
    fn subset_recomputes_vote() {
        let answers = ["A", "B", "B", "A", "A"];
        let ts = answers.iter().enumerate().map(|(i, a)| transcript(i, a)).collect();
        let rec = EnsembleRecord::from_transcripts(question("A"), ts).unwrap();
        assert_eq!(rec.vote_confidence, 0.6);
        let three = rec.subset(3).unwrap();
        assert_eq!(three.majority_answer, Label::new("B"));
        assert!(!three.correct);
        assert_eq!(rec.subset(5).unwrap(), rec);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn c_vote_times_k_is_integer(raw in prop::collection::vec(0u8..4, 1..12)) {
                let answers: Vec<Option<Label>> = raw.iter().map(|&i| Some(Label::letter(i as usize))).collect();
                let v = majority_vote(&answers).unwrap();
                let scaled = v.c_vote * answers.len() as f64;
                prop_assert!((scaled - scaled.round()).abs() < 1e-9);
                prop_assert!(scaled.round() >= 1.0 && scaled.round() <= answers.len() as f64);
            }

            #[test]
            fn permutation_changes_result_only_on_ties(
                raw in prop::collection::vec(0u8..3, 1..9),
                seed in any::<u64>(),
            ) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let answers: Vec<Option<Label>> = raw.iter().map(|&i| Some(Label::letter(i as usize))).collect();
                let mut shuffled = answers.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let a = majority_vote(&answers).unwrap();
                let b = majority_vote(&shuffled).unwrap();
                prop_assert_eq!(a.c_vote, b.c_vote);
                prop_assert_eq!(a.tie, b.tie);
                if !a.tie {
                    prop_assert_eq!(a.majority, b.majority);
                }
            }

            #[test]
            fn tiers_partition(c in 1e-6f64..=1.0) {
                let t = tier_of(c);
                let expected = if c >= 1.0 { Tier::Unanimous } else if c >= 0.8 { Tier::Strong } else { Tier::Weak };
                prop_assert_eq!(t, expected);
            }
        }
    }
}
