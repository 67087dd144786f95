use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ablation::AblationReport;
use super::cost::CostRow;
use super::crossbm::CrossRow;
use super::tiers::TierTable;
use crate::baselines::MethodId;
use crate::bootstrap::PairedComparison;
use crate::metrics::MetricReport;

/// Bumped whenever a field is renamed or removed.
pub const REPORT_SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Equal-width calibration bins (right-closed, 0 in the first bin).
pub fn reliability_bins(confidences: &[f64], labels: &[bool], bins: usize) -> Vec<ReliabilityBin> {
    let mut out: Vec<ReliabilityBin> = (0..bins)
        .map(|b| ReliabilityBin {
            lower: b as f64 / bins as f64,
            upper: (b + 1) as f64 / bins as f64,
            count: 0,
            mean_confidence: 0.0,
            accuracy: 0.0,
        })
        .collect();
    for (&c, &l) in confidences.iter().zip(labels) {
        let b = (0..bins).find(|&b| c <= out[b].upper).unwrap_or(bins - 1);
        out[b].count += 1;
        out[b].mean_confidence += c;
        out[b].accuracy += if l { 1.0 } else { 0.0 };
    }
    for bin in &mut out {
        if bin.count > 0 {
            bin.mean_confidence /= bin.count as f64;
            bin.accuracy /= bin.count as f64;
        }
    }
    out
}

/// (coverage, accuracy) at `points` evenly spaced coverage levels, taking
/// records in descending confidence order. The last point is full coverage.
pub fn accuracy_coverage_curve(confidences: &[f64], labels: &[bool], points: usize) -> Vec<(f64, f64)> {
    let n = confidences.len();
    if n == 0 || points == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    let mut prefix = Vec::with_capacity(n);
    let mut hits = 0usize;
    for (i, &idx) in order.iter().enumerate() {
        hits += usize::from(labels[idx]);
        prefix.push(hits as f64 / (i + 1) as f64);
    }
    let mut curve: Vec<(f64, f64)> = (1..=points)
        .map(|p| {
            let k = ((p as f64 / points as f64) * n as f64).ceil().max(1.0) as usize;
            let k = k.min(n);
            (k as f64 / n as f64, prefix[k - 1])
        })
        .collect();
    curve.dedup_by(|a, b| a.0 == b.0);
    curve
}

/// Metrics for one record set (a benchmark, or everything pooled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSection {
    pub name: String,
    pub n: usize,
    /// Majority-vote accuracy.
    pub accuracy: f64,
    /// Fraction of records that are not unanimous.
    pub disagreement_rate: f64,
    pub metrics: BTreeMap<MethodId, MetricReport>,
    pub curves: BTreeMap<MethodId, Vec<(f64, f64)>>,
    pub reliability: BTreeMap<MethodId, Vec<ReliabilityBin>>,
    /// Methods with no metrics here, and why.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub skipped: BTreeMap<MethodId, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub scope: String,
    pub method_a: MethodId,
    pub method_b: MethodId,
    pub comparison: PairedComparison,
}

/// Unweighted mean of each metric across benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub auroc: f64,
    pub ece: f64,
    pub brier: f64,
    pub auprc: f64,
    pub coverage_at_90: f64,
    pub coverage_at_95: f64,
    pub auacc: f64,
    pub benchmarks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub layout: String,
    pub model: String,
    pub rows: Vec<CrossRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub column: String,
    /// Logistic weight on the standardized column.
    pub weight: f64,
}

/// Weights of a logistic model fitted on every record of a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSection {
    pub layout: String,
    pub weights: Vec<FeatureWeight>,
}

/// The single JSON document a run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: String,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub seed: u64,
    pub methods: Vec<MethodId>,
    pub benchmarks: Vec<BenchmarkSection>,
    pub pooled: BenchmarkSection,
    pub average: BTreeMap<MethodId, AverageMetrics>,
    pub significance: Vec<SignificanceRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tiers: Option<TierTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_benchmark: Option<Vec<CrossSection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<Vec<AblationReport>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<Vec<CostRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_importance: Option<Vec<ImportanceSection>>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl EvaluationReport {
    pub fn new(
        seed: u64,
        methods: Vec<MethodId>,
        benchmarks: Vec<BenchmarkSection>,
        pooled: BenchmarkSection,
        significance: Vec<SignificanceRow>,
    ) -> Self {
        let mut average = BTreeMap::new();
        for &m in &methods {
            let rows: Vec<&MetricReport> = benchmarks.iter().filter_map(|b| b.metrics.get(&m)).collect();
            if rows.is_empty() {
                continue;
            }
            let k = rows.len() as f64;
            let mean = |f: fn(&MetricReport) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
            average.insert(
                m,
                AverageMetrics {
                    auroc: mean(|r| r.auroc),
                    ece: mean(|r| r.ece),
                    brier: mean(|r| r.brier),
                    auprc: mean(|r| r.auprc),
                    coverage_at_90: mean(|r| r.coverage_at_90),
                    coverage_at_95: mean(|r| r.coverage_at_95),
                    auacc: mean(|r| r.auacc),
                    benchmarks: rows.len(),
                },
            );
        }
        EvaluationReport {
            schema_version: REPORT_SCHEMA_VERSION.to_string(),
            config_hash: None,
            seed,
            methods,
            benchmarks,
            pooled,
            average,
            significance,
            tiers: None,
            cross_benchmark: None,
            ablation: None,
            cost: None,
            feature_importance: None,
            notes: Vec::new(),
        }
    }

    /// Every (method, benchmark) cell that is missing a metric report.
    pub fn missing_cells(&self) -> Vec<(String, MethodId)> {
        let mut missing = Vec::new();
        for section in self.benchmarks.iter().chain(std::iter::once(&self.pooled)) {
            for &m in &self.methods {
                if !section.metrics.contains_key(&m) {
                    missing.push((section.name.clone(), m));
                }
            }
        }
        missing
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_ends_at_full_coverage_accuracy() {
        let conf = [0.9, 0.1, 0.5, 0.7, 0.3];
        let labels = [true, false, true, false, true];
        let curve = accuracy_coverage_curve(&conf, &labels, 10);
        assert_eq!(*curve.last().unwrap(), (1.0, 0.6));
        assert_eq!(curve[0], (0.2, 1.0));
        assert!(curve.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn reliability_counts_every_record() {
        let conf = [0.0, 0.1, 0.15, 0.95, 1.0];
        let labels = [false, false, true, true, true];
        let bins = reliability_bins(&conf, &labels, 10);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 5);
        assert_eq!(bins[0].count, 2);
        assert_eq!(bins[1].count, 1);
        assert_eq!(bins[9].count, 2);
        assert_eq!(bins[9].accuracy, 1.0);
    }
}
