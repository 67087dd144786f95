use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::AnalyzedRecord;
use crate::baselines::{MethodId, MethodScore};
use crate::error::Result;
use crate::metrics::auroc;
use crate::model::{DivergenceDepth, Tier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierRow {
    /// Benchmark name, or "pooled".
    pub benchmark: String,
    pub tier: Tier,
    pub method: MethodId,
    pub n: usize,
    pub accuracy: f64,
    pub auroc: f64,
    /// Set when the scorer is constant on the tier or only one class occurs.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapBin {
    Low,
    Medium,
    High,
}

impl OverlapBin {
    pub fn of(overlap: f64) -> Self {
        if overlap <= 1.0 / 3.0 {
            OverlapBin::Low
        } else if overlap <= 2.0 / 3.0 {
            OverlapBin::Medium
        } else {
            OverlapBin::High
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCell {
    pub overlap: OverlapBin,
    pub depth: DivergenceDepth,
    pub count: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierTable {
    pub rows: Vec<TierRow>,
    /// Weak-tier records binned by evidence overlap and divergence depth,
    /// pooled over benchmarks.
    pub weak_profile: Vec<ProfileCell>,
    pub notes: Vec<String>,
}

impl TierTable {
    pub fn get(&self, benchmark: &str, tier: Tier, method: MethodId) -> Option<&TierRow> {
        self.rows
            .iter()
            .find(|r| r.benchmark == benchmark && r.tier == tier && r.method == method)
    }
}

fn tier_rows(scope: &str, records: &[&AnalyzedRecord], scores: &[MethodScore], table: &mut TierTable) -> Result<()> {
    for tier in Tier::ALL {
        let members: Vec<&AnalyzedRecord> = records.iter().copied().filter(|r| r.record.tier == tier).collect();
        if members.is_empty() {
            table.notes.push(format!("{scope}: {} tier is empty, rows omitted", tier.as_str()));
            continue;
        }
        for s in scores {
            let index: HashMap<&str, usize> = s.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
            let mut conf = Vec::new();
            let mut labels = Vec::new();
            for r in &members {
                if let Some(&i) = index.get(r.id()) {
                    conf.push(s.confidences[i]);
                    labels.push(s.correct[i]);
                }
            }
            if conf.is_empty() {
                continue;
            }
            let a = auroc(&conf, &labels)?;
            let constant = conf.iter().all(|&c| c == conf[0]);
            table.rows.push(TierRow {
                benchmark: scope.to_string(),
                tier,
                method: s.method,
                n: conf.len(),
                accuracy: labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64,
                auroc: if constant { 0.5 } else { a.value },
                degenerate: constant || a.degenerate,
            });
        }
    }
    Ok(())
}

/// AUROC of every scored method within each agreement tier, per benchmark
/// and pooled, plus the weak-tier overlap x depth profile.
pub fn tier_analysis(records: &[AnalyzedRecord], scores: &[MethodScore]) -> Result<TierTable> {
    let mut table = TierTable {
        rows: Vec::new(),
        weak_profile: Vec::new(),
        notes: Vec::new(),
    };
    let mut by_benchmark: BTreeMap<&str, Vec<&AnalyzedRecord>> = BTreeMap::new();
    for r in records {
        by_benchmark.entry(r.record.question.benchmark.as_str()).or_default().push(r);
    }
    for (name, recs) in &by_benchmark {
        tier_rows(name, recs, scores, &mut table)?;
    }
    let all: Vec<&AnalyzedRecord> = records.iter().collect();
    tier_rows("pooled", &all, scores, &mut table)?;

    let mut cells: BTreeMap<(OverlapBin, u8), (usize, usize)> = BTreeMap::new();
    let mut unbinned = 0usize;
    for r in records.iter().filter(|r| r.record.tier == Tier::Weak) {
        let Some(s) = &r.structure else {
            unbinned += 1;
            continue;
        };
        let depth = match s.divergence_depth {
            DivergenceDepth::Early => 0,
            DivergenceDepth::Middle => 1,
            DivergenceDepth::Late => 2,
            DivergenceDepth::None => {
                unbinned += 1;
                continue;
            }
        };
        let cell = cells.entry((OverlapBin::of(s.evidence_overlap), depth)).or_default();
        cell.0 += 1;
        cell.1 += usize::from(r.record.correct);
    }
    if unbinned > 0 {
        table
            .notes
            .push(format!("{unbinned} weak-tier records lack a divergence depth and are not profiled"));
    }
    for overlap in [OverlapBin::Low, OverlapBin::Medium, OverlapBin::High] {
        for (d, depth) in [DivergenceDepth::Early, DivergenceDepth::Middle, DivergenceDepth::Late]
            .into_iter()
            .enumerate()
        {
            let (count, hits) = cells.get(&(overlap, d as u8)).copied().unwrap_or((0, 0));
            table.weak_profile.push(ProfileCell {
                overlap,
                depth,
                count,
                accuracy: (count > 0).then(|| hits as f64 / count as f64),
            });
        }
    }
    Ok(table)
}
