//! CSV exports of per-record scores and features, and metrics computed
//! straight from a scores file.

use std::collections::BTreeMap;
use std::path::Path;

use quorum_core::baselines::{MethodId, MethodScore};
use quorum_core::bootstrap::paired_bootstrap;
use quorum_core::experiments::{build_design, AnalyzedRecord, SignificanceRow, REPORT_SCHEMA_VERSION};
use quorum_core::features::Layout;
use quorum_core::metrics::{metric_report, MetricOptions, MetricReport};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    #[serde(default)]
    pub benchmark: String,
    pub method: MethodId,
    pub confidence: f64,
    /// 1 when the method's answer matched gold.
    pub correct: u8,
}

/// Long-format rows, one per (record, method), in score order.
pub fn score_rows(scores: &[MethodScore], benchmark_of: &BTreeMap<String, String>) -> Vec<ScoreRow> {
    scores
        .iter()
        .flat_map(|s| {
            s.ids.iter().zip(&s.confidences).zip(&s.correct).map(move |((id, &c), &l)| ScoreRow {
                id: id.clone(),
                benchmark: benchmark_of.get(id).cloned().unwrap_or_default(),
                method: s.method,
                confidence: c,
                correct: u8::from(l),
            })
        })
        .collect()
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| with_path(e, path))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| with_path(e, path))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| PipelineError::Source {
                path: path.to_path_buf(),
                // Header is line 1.
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

fn with_path(e: csv::Error, path: &Path) -> PipelineError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => PipelineError::io(path, io),
        other => PipelineError::Config(format!("{}: {other:?}", path.display())),
    }
}

/// `id,benchmark,<layout columns>,correct` for every record. Layouts whose
/// inputs are missing are skipped by the caller.
pub fn write_features_csv(path: &Path, records: &[AnalyzedRecord], layout: Layout) -> Result<()> {
    let design = build_design(records, layout)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| with_path(e, path))?;
    let mut header = vec!["id".to_string(), "benchmark".to_string()];
    header.extend(design.columns.iter().cloned());
    header.push("correct".into());
    w.write_record(&header)?;
    for (r, row) in records.iter().zip(&design.rows) {
        let mut cells = vec![r.id().to_string(), r.record.question.benchmark.as_str().to_string()];
        cells.extend(row.iter().map(|x| x.to_string()));
        cells.push(u8::from(r.record.correct).to_string());
        w.write_record(&cells)?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSection {
    pub name: String,
    pub metrics: BTreeMap<MethodId, MetricReport>,
}

/// Metrics for an externally produced scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresEvaluation {
    pub schema_version: String,
    pub seed: u64,
    pub sections: Vec<ScoreSection>,
    pub significance: Vec<SignificanceRow>,
}

fn group(rows: &[&ScoreRow]) -> BTreeMap<MethodId, MethodScore> {
    let mut out: BTreeMap<MethodId, MethodScore> = BTreeMap::new();
    for r in rows {
        out.entry(r.method)
            .or_insert_with(|| MethodScore::new(r.method))
            .push(&r.id, r.confidence, r.correct != 0);
    }
    out
}

/// Metrics per benchmark column value (when present) and over all rows,
/// plus paired bootstrap tests of every method against B1 where both
/// scored the same records.
pub fn evaluate_scores(rows: &[ScoreRow], opts: &MetricOptions, resamples: usize) -> Result<ScoresEvaluation> {
    if rows.is_empty() {
        return Err(quorum_core::Error::Empty("scores file").into());
    }
    let mut scopes: BTreeMap<String, Vec<&ScoreRow>> = BTreeMap::new();
    for r in rows {
        if !r.benchmark.is_empty() {
            scopes.entry(r.benchmark.clone()).or_default().push(r);
        }
    }
    let all: Vec<&ScoreRow> = rows.iter().collect();
    let mut ordered: Vec<(String, Vec<&ScoreRow>)> = scopes.into_iter().collect();
    ordered.push(("all".into(), all));

    let mut sections = Vec::new();
    let mut significance = Vec::new();
    for (name, scoped) in &ordered {
        let by_method = group(scoped);
        let mut metrics = BTreeMap::new();
        for (m, s) in &by_method {
            metrics.insert(*m, metric_report(&s.confidences, &s.correct, opts)?);
        }
        if let Some(base) = by_method.get(&MethodId::B1) {
            for (m, s) in by_method.iter().filter(|(m, _)| **m != MethodId::B1) {
                let pos = s.correct.iter().filter(|&&l| l).count();
                if s.ids != base.ids || s.correct != base.correct || pos == 0 || pos == s.correct.len() {
                    continue;
                }
                significance.push(SignificanceRow {
                    scope: name.clone(),
                    method_a: *m,
                    method_b: MethodId::B1,
                    comparison: paired_bootstrap(&s.confidences, &base.confidences, &s.correct, resamples, opts.seed)?,
                });
            }
        }
        sections.push(ScoreSection {
            name: name.clone(),
            metrics,
        });
    }
    Ok(ScoresEvaluation {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        seed: opts.seed,
        sections,
        significance,
    })
}
