use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::report::{
    accuracy_coverage_curve, reliability_bins, BenchmarkSection, EvaluationReport, FeatureWeight, ImportanceSection,
    SignificanceRow,
};
use super::AnalyzedRecord;
use crate::baselines::{centroid_confidence, score_llm_aggregator, score_vote_based, MethodId, MethodScore, VoteVariant};
use crate::bootstrap::paired_bootstrap;
use crate::error::{Error, Result};
use crate::features::{assemble_features, Design, Layout};
use crate::metrics::{metric_report, MetricOptions};
use crate::model::Benchmark;
use crate::models::{cross_validate, Classifier, CvOptions, ModelKind, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOptions {
    pub cv: CvOptions,
    pub metrics: MetricOptions,
    pub bootstrap_resamples: usize,
    /// Paired AUROC comparisons (A, B) reported where both methods score
    /// the same records under the same correctness labels.
    pub comparisons: Vec<(MethodId, MethodId)>,
    /// Points on each accuracy-coverage curve in the report.
    pub curve_points: usize,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            cv: CvOptions::default(),
            metrics: MetricOptions::default(),
            bootstrap_resamples: 1000,
            comparisons: vec![
                (MethodId::M1, MethodId::B1),
                (MethodId::M2, MethodId::B1),
                (MethodId::M3, MethodId::B1),
                (MethodId::M1, MethodId::M2),
            ],
            curve_points: 50,
        }
    }
}

/// Feature layout and model behind each learned method.
pub fn learned_layout(method: MethodId) -> Option<(Layout, ModelKind)> {
    match method {
        MethodId::M1 => Some((Layout::M1, ModelKind::Logistic)),
        MethodId::M2 => Some((Layout::M2, ModelKind::Logistic)),
        MethodId::M3 => Some((Layout::M3, ModelKind::Mlp)),
        _ => None,
    }
}

/// Raw design matrix for `layout`. Records without any majority verbalized
/// confidence get the corpus mean of the available values in M3.
pub fn build_design(records: &[AnalyzedRecord], layout: Layout) -> Result<Design> {
    let fill = if layout == Layout::M3 {
        let available: Vec<f64> = records
            .iter()
            .filter_map(|r| r.record.mean_majority_verbalized())
            .collect();
        if available.is_empty() {
            None
        } else {
            Some(available.iter().sum::<f64>() / available.len() as f64)
        }
    } else {
        None
    };
    let vectors = records
        .iter()
        .map(|r| {
            let verbalized = r.record.mean_majority_verbalized().or(fill);
            assemble_features(&r.record, r.structure.as_ref(), r.geometry.as_ref(), verbalized, layout)
        })
        .collect::<Result<Vec<_>>>()?;
    Design::from_vectors(&vectors)
}

/// Per-record confidences for each requested method. Learned methods are
/// scored out-of-fold within `records`.
pub fn score_methods(records: &[AnalyzedRecord], methods: &[MethodId], opts: &CvOptions) -> Result<Vec<MethodScore>> {
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut score = MethodScore::new(method);
        match method {
            MethodId::B1 | MethodId::B2 | MethodId::B4 => {
                let variant = match method {
                    MethodId::B1 => VoteVariant::Count,
                    MethodId::B2 => VoteVariant::Entropy,
                    _ => VoteVariant::SelfConsistency,
                };
                for r in records {
                    score.push(r.id(), score_vote_based(&r.record, variant)?, r.record.correct);
                }
            }
            MethodId::B3 => {
                for r in records {
                    match r.record.mean_majority_verbalized() {
                        Some(c) => score.push(r.id(), c, r.record.correct),
                        None => score.flagged.push(r.id().to_string()),
                    }
                }
                if !score.flagged.is_empty() {
                    warn!(excluded = score.flagged.len(), "records without verbalized confidence excluded from B3");
                }
            }
            MethodId::B5 => {
                for r in records {
                    let g = r.geometry.as_ref().ok_or(Error::MissingFeature {
                        layout: "B5".into(),
                        field: "geometry",
                    })?;
                    score.push(r.id(), centroid_confidence(g.majority_centrality), r.record.correct);
                }
            }
            MethodId::B6 => {
                for r in records {
                    let agg = r.aggregator.as_ref().ok_or(Error::MissingFeature {
                        layout: "B6".into(),
                        field: "aggregator",
                    })?;
                    let s = score_llm_aggregator(&r.record, agg);
                    if s.flagged {
                        score.flagged.push(r.id().to_string());
                    }
                    score.push(r.id(), s.confidence, s.correct);
                }
            }
            MethodId::M1 | MethodId::M2 | MethodId::M3 => {
                let (layout, kind) = learned_layout(method).expect("learned method");
                let design = build_design(records, layout)?;
                let labels: Vec<bool> = records.iter().map(|r| r.record.correct).collect();
                match cross_validate(&design, &labels, kind, opts) {
                    Ok(conf) => {
                        for ((r, c), l) in records.iter().zip(conf).zip(labels) {
                            score.push(r.id(), c, l);
                        }
                    }
                    // Too few errors (or too few correct answers) to fill every fold.
                    Err(e @ Error::InsufficientClasses { .. }) => {
                        warn!(method = %method, "not scored: {e}");
                        score.skipped = Some(e.to_string());
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        score.cost = super::cost::method_cost(method, records);
        out.push(score);
    }
    Ok(out)
}

fn section(name: &str, records: &[AnalyzedRecord], scores: &[MethodScore], opts: &EvaluateOptions) -> Result<BenchmarkSection> {
    let n = records.len();
    let correct = records.iter().filter(|r| r.record.correct).count();
    let disagree = records.iter().filter(|r| !r.record.is_unanimous()).count();
    let mut metrics = BTreeMap::new();
    let mut curves = BTreeMap::new();
    let mut reliability = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    for s in scores {
        if let Some(reason) = &s.skipped {
            skipped.insert(s.method, reason.clone());
            continue;
        }
        if s.is_empty() {
            continue;
        }
        metrics.insert(s.method, metric_report(&s.confidences, &s.correct, &opts.metrics)?);
        curves.insert(s.method, accuracy_coverage_curve(&s.confidences, &s.correct, opts.curve_points));
        reliability.insert(s.method, reliability_bins(&s.confidences, &s.correct, opts.metrics.ece_bins));
    }
    Ok(BenchmarkSection {
        name: name.to_string(),
        n,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        disagreement_rate: if n == 0 { 0.0 } else { disagree as f64 / n as f64 },
        metrics,
        curves,
        reliability,
        skipped,
    })
}

fn significance(name: &str, scores: &[MethodScore], opts: &EvaluateOptions) -> Result<Vec<SignificanceRow>> {
    let mut rows = Vec::new();
    for &(a, b) in &opts.comparisons {
        let (Some(sa), Some(sb)) = (
            scores.iter().find(|s| s.method == a),
            scores.iter().find(|s| s.method == b),
        ) else {
            continue;
        };
        if sa.ids != sb.ids || sa.correct != sb.correct {
            continue;
        }
        let pos = sa.correct.iter().filter(|&&l| l).count();
        if pos == 0 || pos == sa.correct.len() {
            continue;
        }
        let cmp = paired_bootstrap(&sa.confidences, &sb.confidences, &sa.correct, opts.bootstrap_resamples, opts.metrics.seed)?;
        rows.push(SignificanceRow {
            scope: name.to_string(),
            method_a: a,
            method_b: b,
            comparison: cmp,
        });
    }
    Ok(rows)
}

/// Concatenates per-benchmark scores in benchmark order.
fn concat(per_benchmark: &[Vec<MethodScore>], methods: &[MethodId]) -> Vec<MethodScore> {
    methods
        .iter()
        .map(|&m| {
            let mut pooled = MethodScore::new(m);
            for scores in per_benchmark {
                if let Some(s) = scores.iter().find(|s| s.method == m) {
                    pooled.ids.extend(s.ids.iter().cloned());
                    pooled.confidences.extend(&s.confidences);
                    pooled.correct.extend(&s.correct);
                    pooled.flagged.extend(s.flagged.iter().cloned());
                    pooled.cost.calls += s.cost.calls;
                    pooled.cost.tokens += s.cost.tokens;
                    if let Some(reason) = &s.skipped {
                        pooled.skipped = Some(format!("skipped on at least one benchmark: {reason}"));
                    }
                }
            }
            if pooled.skipped.is_some() {
                // A pool over only some benchmarks would not compare with
                // the other methods.
                pooled.ids.clear();
                pooled.confidences.clear();
                pooled.correct.clear();
            }
            pooled
        })
        .collect()
}

/// Scores every method within each benchmark (learned methods by
/// within-benchmark CV) and reports metrics per benchmark, pooled over the
/// concatenated out-of-fold scores, and averaged across benchmarks.
pub fn evaluate(
    records: &[AnalyzedRecord],
    methods: &[MethodId],
    opts: &EvaluateOptions,
) -> Result<(EvaluationReport, Vec<MethodScore>)> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    let mut by_benchmark: BTreeMap<Benchmark, Vec<AnalyzedRecord>> = BTreeMap::new();
    for r in records {
        by_benchmark.entry(r.record.question.benchmark).or_default().push(r.clone());
    }

    let mut sections = Vec::new();
    let mut all_scores = Vec::new();
    let mut sig = Vec::new();
    let mut ordered = Vec::new();
    for (benchmark, recs) in &by_benchmark {
        let scores = score_methods(recs, methods, &opts.cv)?;
        sections.push(section(benchmark.as_str(), recs, &scores, opts)?);
        sig.extend(significance(benchmark.as_str(), &scores, opts)?);
        ordered.extend(recs.iter().cloned());
        all_scores.push(scores);
    }
    let pooled_scores = concat(&all_scores, methods);
    let pooled = section("pooled", &ordered, &pooled_scores, opts)?;
    if by_benchmark.len() > 1 {
        sig.extend(significance("pooled", &pooled_scores, opts)?);
    }

    let report = EvaluationReport::new(opts.metrics.seed, methods.to_vec(), sections, pooled, sig);
    Ok((report, pooled_scores))
}

/// Standardized logistic weights for `layout`, fitted on all of `records`.
pub fn feature_importance(records: &[AnalyzedRecord], layout: Layout, opts: &CvOptions) -> Result<ImportanceSection> {
    let design = build_design(records, layout)?;
    let labels: Vec<bool> = records.iter().map(|r| r.record.correct).collect();
    let model = TrainedModel::fit(layout.as_str(), &design, &labels, ModelKind::Logistic, &opts.logistic, &opts.mlp)?;
    let Classifier::Logistic(lr) = &model.classifier else {
        unreachable!("logistic requested");
    };
    Ok(ImportanceSection {
        layout: layout.as_str().to_string(),
        weights: design
            .columns
            .iter()
            .zip(&lr.weights)
            .map(|(c, &w)| FeatureWeight {
                column: c.clone(),
                weight: w,
            })
            .collect(),
    })
}
