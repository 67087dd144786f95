use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::evaluate::build_design;
use super::AnalyzedRecord;
use crate::error::{Error, Result};
use crate::features::Layout;
use crate::metrics::auroc;
use crate::model::Benchmark;
use crate::models::{cross_validate, fit_and_predict, CvOptions, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRow {
    pub benchmark: Benchmark,
    pub n_train: usize,
    pub n_test: usize,
    /// Trained on every other benchmark, tested on this one.
    pub cross_auroc: f64,
    /// Out-of-fold AUROC from CV within this benchmark.
    pub same_auroc: f64,
    pub delta: f64,
}

/// Leave-one-benchmark-out transfer for one layout and model kind.
pub fn cross_benchmark(
    records: &[AnalyzedRecord],
    layout: Layout,
    kind: ModelKind,
    opts: &CvOptions,
) -> Result<Vec<CrossRow>> {
    let mut groups: BTreeMap<Benchmark, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.record.question.benchmark).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::Invalid(format!(
            "leave-one-benchmark-out needs at least 2 benchmarks, got {}",
            groups.len()
        )));
    }
    let design = build_design(records, layout)?;
    let labels: Vec<bool> = records.iter().map(|r| r.record.correct).collect();

    let mut rows = Vec::new();
    for (&held_out, test_idx) in &groups {
        let train_idx: Vec<usize> = groups
            .iter()
            .filter(|&(&b, _)| b != held_out)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let train_labels: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
        let positives = train_labels.iter().filter(|&&l| l).count();
        if positives == 0 || positives == train_labels.len() {
            return Err(Error::InsufficientClasses {
                positives,
                negatives: train_labels.len() - positives,
                required: 1,
            });
        }
        let test_labels: Vec<bool> = test_idx.iter().map(|&i| labels[i]).collect();
        let test = design.subset_rows(test_idx);
        let cross = fit_and_predict(&design.subset_rows(&train_idx), &train_labels, &test, kind, opts)?;
        let same = cross_validate(&test, &test_labels, kind, opts)?;
        let cross_auroc = auroc(&cross, &test_labels)?.value;
        let same_auroc = auroc(&same, &test_labels)?.value;
        rows.push(CrossRow {
            benchmark: held_out,
            n_train: train_idx.len(),
            n_test: test_idx.len(),
            cross_auroc,
            same_auroc,
            delta: cross_auroc - same_auroc,
        });
    }
    Ok(rows)
}
