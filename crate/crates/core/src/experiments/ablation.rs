use serde::{Deserialize, Serialize};

use super::evaluate::build_design;
use super::AnalyzedRecord;
use crate::error::{Error, Result};
use crate::features::{Design, Layout};
use crate::metrics::auroc;
use crate::model::StructureFeatures;
use crate::models::{cross_validate, CvOptions, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub layout: Layout,
    pub kind: ModelKind,
    /// Columns to drop one at a time. Empty means every column but c_vote.
    #[serde(default)]
    pub drop_one: Vec<String>,
    #[serde(default)]
    pub skip_drop_one: bool,
    #[serde(default = "default_true")]
    pub vote_only: bool,
    /// Team sizes for the agent-count ablation; each keeps the first n agents.
    #[serde(default)]
    pub agent_counts: Vec<usize>,
}

fn default_true() -> bool {
    true
}

impl AblationPlan {
    pub fn new(layout: Layout, kind: ModelKind) -> Self {
        AblationPlan {
            layout,
            kind,
            drop_one: Vec::new(),
            skip_drop_one: false,
            vote_only: true,
            agent_counts: vec![3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRow {
    pub column: String,
    pub auroc: f64,
    /// AUROC without the column minus the full-layout AUROC.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCountRow {
    pub n: usize,
    pub accuracy: f64,
    pub b1_auroc: f64,
    /// Structure-feature model retrained by CV on the n-agent records.
    pub m1_auroc: Option<f64>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Benchmark name, or "pooled".
    #[serde(default)]
    pub scope: String,
    pub layout: Layout,
    pub kind: ModelKind,
    pub full_auroc: f64,
    pub b1_auroc: f64,
    pub drops: Vec<DropRow>,
    /// Logistic model on c_vote alone.
    pub vote_only: Option<DropRow>,
    pub agent_counts: Vec<AgentCountRow>,
    pub notes: Vec<String>,
}

fn cv_auroc(design: &Design, labels: &[bool], kind: ModelKind, opts: &CvOptions) -> Result<f64> {
    let conf = cross_validate(design, labels, kind, opts)?;
    Ok(auroc(&conf, labels)?.value)
}

/// Records re-voted over the first `n` agents. Structure scores are kept
/// from the full team for records that still disagree and reset to the
/// unanimous defaults for records that become unanimous.
pub fn subset_records(records: &[AnalyzedRecord], n: usize) -> Result<Vec<AnalyzedRecord>> {
    records
        .iter()
        .map(|r| {
            let record = r.record.subset(n)?;
            let structure = if record.is_unanimous() {
                Some(StructureFeatures::unanimous_default())
            } else {
                r.structure
            };
            Ok(AnalyzedRecord {
                record,
                structure,
                geometry: None,
                aggregator: None,
                cost: r.cost,
            })
        })
        .collect()
}

/// Runs every variant in `plan` on one record set.
pub fn ablate(records: &[AnalyzedRecord], plan: &AblationPlan, opts: &CvOptions) -> Result<AblationReport> {
    if records.is_empty() {
        return Err(Error::Empty("ablation corpus"));
    }
    let columns = plan.layout.columns();
    for c in &plan.drop_one {
        if !columns.contains(&c.as_str()) {
            return Err(Error::Invalid(format!(
                "cannot drop `{c}`: not a column of layout {}",
                plan.layout.as_str()
            )));
        }
    }
    let labels: Vec<bool> = records.iter().map(|r| r.record.correct).collect();
    let design = build_design(records, plan.layout)?;
    let full_auroc = cv_auroc(&design, &labels, plan.kind, opts)?;
    let vote: Vec<f64> = records.iter().map(|r| r.record.vote_confidence).collect();
    let b1_auroc = auroc(&vote, &labels)?.value;

    let mut drops = Vec::new();
    if !plan.skip_drop_one {
        let targets: Vec<String> = if plan.drop_one.is_empty() {
            columns.iter().skip(1).map(|c| c.to_string()).collect()
        } else {
            plan.drop_one.clone()
        };
        for column in targets {
            let a = cv_auroc(&design.drop_column(&column)?, &labels, plan.kind, opts)?;
            drops.push(DropRow {
                column,
                auroc: a,
                delta: a - full_auroc,
            });
        }
    }

    let vote_only = if plan.vote_only {
        let a = cv_auroc(&design.select(&["c_vote"])?, &labels, ModelKind::Logistic, opts)?;
        Some(DropRow {
            column: "c_vote".into(),
            auroc: a,
            delta: a - full_auroc,
        })
    } else {
        None
    };

    let mut notes = Vec::new();
    let mut agent_counts = Vec::new();
    for &n in &plan.agent_counts {
        let subset = subset_records(records, n)?;
        let sub_labels: Vec<bool> = subset.iter().map(|r| r.record.correct).collect();
        let sub_vote: Vec<f64> = subset.iter().map(|r| r.record.vote_confidence).collect();
        let m1 = build_design(&subset, Layout::M1).and_then(|d| cv_auroc(&d, &sub_labels, ModelKind::Logistic, opts));
        let (m1_auroc, note) = match m1 {
            Ok(a) => (Some(a), None),
            Err(e) => (None, Some(e.to_string())),
        };
        agent_counts.push(AgentCountRow {
            n,
            accuracy: sub_labels.iter().filter(|&&l| l).count() as f64 / sub_labels.len() as f64,
            b1_auroc: auroc(&sub_vote, &sub_labels)?.value,
            m1_auroc,
            note,
        });
    }
    if !plan.agent_counts.is_empty() {
        notes.push("agent-count subsets keep the first n agents by index".into());
    }

    Ok(AblationReport {
        scope: "pooled".into(),
        layout: plan.layout,
        kind: plan.kind,
        full_auroc,
        b1_auroc,
        drops,
        vote_only,
        agent_counts,
        notes,
    })
}
