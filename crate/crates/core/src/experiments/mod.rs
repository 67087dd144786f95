//! Corpus-level analyses over analyzed records: method scoring, tier
//! breakdowns, cross-benchmark transfer, ablations, cost accounting and the
//! synthetic-ensemble generator used to verify them.

mod ablation;
mod cost;
mod crossbm;
mod evaluate;
mod report;
mod synth;
mod tiers;

pub use ablation::{ablate, subset_records, AblationPlan, AblationReport, AgentCountRow, DropRow};
pub use cost::{cost_report, expected_calls, CostLedger, CostRow};
pub use crossbm::{cross_benchmark, CrossRow};
pub use evaluate::{build_design, evaluate, feature_importance, learned_layout, score_methods, EvaluateOptions};
pub use report::{
    accuracy_coverage_curve, reliability_bins, AverageMetrics, BenchmarkSection, CrossSection, EvaluationReport,
    FeatureWeight, ImportanceSection, ReliabilityBin, SignificanceRow, REPORT_SCHEMA_VERSION,
};
pub use synth::{synth_generate, FamilyNoise, PlantedWeights, SyntheticCorpus, SyntheticSpec};
pub use tiers::{tier_analysis, OverlapBin, ProfileCell, TierRow, TierTable};

use serde::{Deserialize, Serialize};

use crate::model::{AggregatorOutput, EnsembleRecord, GeometryFeatures, StructureFeatures};

/// Extra model calls and tokens spent on one record, per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCost {
    pub verbalized_calls: u64,
    pub verbalized_tokens: u64,
    pub structure_calls: u64,
    pub structure_tokens: u64,
    pub aggregator_calls: u64,
    pub aggregator_tokens: u64,
}

/// An ensemble record together with every analysis the methods consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzedRecord {
    pub record: EnsembleRecord,
    #[serde(default)]
    pub structure: Option<StructureFeatures>,
    #[serde(default)]
    pub geometry: Option<GeometryFeatures>,
    #[serde(default)]
    pub aggregator: Option<AggregatorOutput>,
    #[serde(default)]
    pub cost: RecordCost,
}

impl AnalyzedRecord {
    pub fn id(&self) -> &str {
        &self.record.question.id
    }
}
