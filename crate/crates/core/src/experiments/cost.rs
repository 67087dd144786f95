use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnalyzedRecord, RecordCost};
use crate::baselines::{CallCost, MethodId, MethodScore};

fn record_cost(method: MethodId, c: &RecordCost) -> CallCost {
    match method {
        MethodId::B3 => CallCost {
            calls: c.verbalized_calls,
            tokens: c.verbalized_tokens,
        },
        MethodId::B6 => CallCost {
            calls: c.aggregator_calls,
            tokens: c.aggregator_tokens,
        },
        MethodId::M1 => CallCost {
            calls: c.structure_calls,
            tokens: c.structure_tokens,
        },
        MethodId::M3 => CallCost {
            calls: c.verbalized_calls + c.structure_calls,
            tokens: c.verbalized_tokens + c.structure_tokens,
        },
        MethodId::B1 | MethodId::B2 | MethodId::B4 | MethodId::B5 | MethodId::M2 => CallCost::default(),
    }
}

/// Measured extra calls and tokens a method spent over `records`.
pub(crate) fn method_cost(method: MethodId, records: &[AnalyzedRecord]) -> CallCost {
    records.iter().fold(CallCost::default(), |acc, r| {
        let c = record_cost(method, &r.cost);
        CallCost {
            calls: acc.calls + c.calls,
            tokens: acc.tokens + c.tokens,
        }
    })
}

/// Calls a method should need on `records` when every stage succeeds on
/// its first attempt: K per record for B3, one per non-unanimous record
/// for M1, both for M3, one per record for B6.
pub fn expected_calls(method: MethodId, records: &[AnalyzedRecord]) -> u64 {
    records
        .iter()
        .map(|r| {
            let k = r.record.k() as u64;
            let split = u64::from(!r.record.is_unanimous());
            match method {
                MethodId::B3 => k,
                MethodId::B6 => 1,
                MethodId::M1 => split,
                MethodId::M3 => k + split,
                _ => 0,
            }
        })
        .sum()
}

/// Per-method call totals over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub questions: usize,
    pub totals: BTreeMap<MethodId, CallCost>,
}

impl CostLedger {
    pub fn from_records(records: &[AnalyzedRecord], methods: &[MethodId]) -> Self {
        CostLedger {
            questions: records.len(),
            totals: methods.iter().map(|&m| (m, method_cost(m, records))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub method: MethodId,
    pub extra_calls: u64,
    pub calls_per_question: f64,
    pub tokens_per_question: f64,
    #[serde(default)]
    pub auroc: Option<f64>,
}

/// One row per ledger method, joined with pooled AUROC where available.
pub fn cost_report(ledger: &CostLedger, scores: &[MethodScore]) -> Vec<CostRow> {
    let n = ledger.questions.max(1) as f64;
    ledger
        .totals
        .iter()
        .map(|(&method, cost)| CostRow {
            method,
            extra_calls: cost.calls,
            calls_per_question: cost.calls as f64 / n,
            tokens_per_question: cost.tokens as f64 / n,
            auroc: scores
                .iter()
                .find(|s| s.method == method && !s.is_empty())
                .and_then(|s| crate::metrics::auroc(&s.confidences, &s.correct).ok())
                .map(|a| a.value),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentTranscript, AnswerFormat, Benchmark, EnsembleRecord, Label, QuestionRecord};

    fn record(answers: &[&str], cost: RecordCost) -> AnalyzedRecord {
        let question = QuestionRecord {
            id: "q".into(),
            benchmark: Benchmark::StrategyQa,
            text: "?".into(),
            answer_format: AnswerFormat::YesNo,
            choices: vec![],
            choice_count: 2,
            gold: Label::yes(),
            provenance: None,
        };
        let transcripts = answers
            .iter()
            .enumerate()
            .map(|(i, a)| AgentTranscript {
                agent_index: i,
                role_name: "r".into(),
                model_id: "m".into(),
                reasoning: String::new(),
                answer: Some(Label::new(a)),
                verbalized_confidence: Some(0.8),
                prompt_tokens: 0,
                completion_tokens: 0,
            })
            .collect();
        AnalyzedRecord {
            record: EnsembleRecord::from_transcripts(question, transcripts).unwrap(),
            structure: None,
            geometry: None,
            aggregator: None,
            cost,
        }
    }

    #[test]
    fn ledger_sums_per_record_counts() {
        let full = RecordCost {
            verbalized_calls: 5,
            verbalized_tokens: 50,
            structure_calls: 1,
            structure_tokens: 30,
            aggregator_calls: 1,
            aggregator_tokens: 20,
        };
        let unanimous = RecordCost {
            structure_calls: 0,
            structure_tokens: 0,
            ..full
        };
        let records = vec![
            record(&["yes", "yes", "no", "yes", "no"], full),
            record(&["yes"; 5], unanimous),
        ];
        let ledger = CostLedger::from_records(&records, &MethodId::ALL);
        assert_eq!(ledger.totals[&MethodId::B1].calls, 0);
        assert_eq!(ledger.totals[&MethodId::B3].calls, 10);
        assert_eq!(ledger.totals[&MethodId::M1].calls, 1);
        assert_eq!(ledger.totals[&MethodId::M3].calls, 11);
        assert_eq!(ledger.totals[&MethodId::B6].tokens, 40);
        for m in MethodId::ALL {
            assert_eq!(ledger.totals[&m].calls, expected_calls(m, &records), "{m}");
        }
        let rows = cost_report(&ledger, &[]);
        assert_eq!(rows.len(), 9);
        assert_eq!(rows.iter().find(|r| r.method == MethodId::M3).unwrap().tokens_per_question, 65.0);
    }
}
