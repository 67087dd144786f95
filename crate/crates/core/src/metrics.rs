//! Discrimination, calibration and selective-prediction metrics.
//!
//! `labels[i]` is true when record `i` is correct. Ties in confidence are
//! broken by record order wherever an ordering is needed.

use serde::{Deserialize, Serialize};

use crate::bootstrap::auroc_interval;
use crate::error::{Error, Result};

fn check_lengths(confidences: &[f64], labels: &[bool]) -> Result<()> {
    if confidences.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: confidences.len(),
            right: labels.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Auroc {
    pub value: f64,
    /// Set when only one class is present; `value` is then 0.5 by convention.
    pub degenerate: bool,
}

/// Mann-Whitney AUROC by rank summation with midranks for ties.
pub fn auroc(confidences: &[f64], labels: &[bool]) -> Result<Auroc> {
    check_lengths(confidences, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(Auroc {
            value: 0.5,
            degenerate: true,
        });
    }
    let ranks = midranks(confidences);
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter_map(|(r, &l)| l.then_some(*r))
        .sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    let u = pos_rank_sum - p * (p + 1.0) / 2.0;
    Ok(Auroc {
        value: u / (p * n),
        degenerate: false,
    })
}

/// 1-based ranks, ties sharing the mean of their positions.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Index of the equal-width bin holding `c`; bins are right-closed and the
/// first bin also holds 0.
fn bin_index(c: f64, bins: usize) -> usize {
    (0..bins)
        .find(|&b| c <= (b + 1) as f64 / bins as f64)
        .unwrap_or(bins - 1)
}

/// Expected calibration error over `bins` equal-width bins.
pub fn ece(confidences: &[f64], labels: &[bool], bins: usize) -> Result<f64> {
    check_lengths(confidences, labels)?;
    if bins == 0 {
        return Err(Error::Invalid("ece needs at least one bin".into()));
    }
    let n = confidences.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    for (&c, &l) in confidences.iter().zip(labels) {
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        correct[b] += usize::from(l);
    }
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n as f64) * (correct[b] as f64 / nb - conf_sum[b] / nb).abs()
        })
        .sum())
}

pub fn brier(confidences: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(confidences, labels)?;
    if confidences.is_empty() {
        return Err(Error::Empty("brier"));
    }
    let sum: f64 = confidences
        .iter()
        .zip(labels)
        .map(|(&c, &l)| {
            let y = if l { 1.0 } else { 0.0 };
            (c - y) * (c - y)
        })
        .sum();
    Ok(sum / confidences.len() as f64)
}

/// Record indices by descending confidence, ties in record order.
fn descending_order(confidences: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    // Stable sort keeps record order within ties.
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    order
}

/// Average precision with correct records as the positive class.
pub fn average_precision(confidences: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(confidences, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::Undefined("average precision with zero positives"));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &idx) in descending_order(confidences).iter().enumerate() {
        if labels[idx] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// (Brier, AUPRC).
pub fn score_quality(confidences: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    Ok((brier(confidences, labels)?, average_precision(confidences, labels)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selective {
    /// (threshold, coverage) pairs in the order requested.
    pub coverage: Vec<(f64, f64)>,
    pub auacc: f64,
}

impl Selective {
    pub fn coverage_at(&self, tau: f64) -> Option<f64> {
        self.coverage
            .iter()
            .find(|(t, _)| (t - tau).abs() < 1e-12)
            .map(|&(_, c)| c)
    }
}

/// Coverage at each accuracy threshold and area under the accuracy-coverage
/// curve (anchored at coverage 0 with the top-1 accuracy).
pub fn selective_metrics(confidences: &[f64], labels: &[bool], thresholds: &[f64]) -> Result<Selective> {
    check_lengths(confidences, labels)?;
    let n = confidences.len();
    if n == 0 {
        return Err(Error::Empty("selective_metrics"));
    }
    let mut prefix_acc = Vec::with_capacity(n);
    let mut hits = 0usize;
    for (i, &idx) in descending_order(confidences).iter().enumerate() {
        hits += usize::from(labels[idx]);
        prefix_acc.push(hits as f64 / (i + 1) as f64);
    }
    let coverage = thresholds
        .iter()
        .map(|&tau| {
            let best = prefix_acc
                .iter()
                .enumerate()
                .rev()
                .find(|(_, &acc)| acc >= tau)
                .map(|(i, _)| (i + 1) as f64 / n as f64)
                .unwrap_or(0.0);
            (tau, best)
        })
        .collect();

    let mut auacc = 0.0;
    let mut prev = (0.0, prefix_acc[0]);
    for (i, &acc) in prefix_acc.iter().enumerate() {
        let x = (i + 1) as f64 / n as f64;
        auacc += (x - prev.0) * (acc + prev.1) / 2.0;
        prev = (x, acc);
    }
    Ok(Selective { coverage, auacc })
}

/// All seven metrics for one method on one record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub auroc_ci: (f64, f64),
    pub ece: f64,
    pub brier: f64,
    pub auprc: f64,
    pub coverage_at_90: f64,
    pub coverage_at_95: f64,
    pub auacc: f64,
    pub n: usize,
    /// Metrics reported at a conventional value because they are undefined
    /// on this record set (`auroc` with one class, `auprc` with no positives).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub ece_bins: usize,
    pub ci_resamples: usize,
    pub seed: u64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            ece_bins: 10,
            ci_resamples: 1000,
            seed: 42,
        }
    }
}

pub fn metric_report(confidences: &[f64], labels: &[bool], opts: &MetricOptions) -> Result<MetricReport> {
    check_lengths(confidences, labels)?;
    if confidences.is_empty() {
        return Err(Error::Empty("metric_report"));
    }
    let mut degenerate = Vec::new();
    let a = auroc(confidences, labels)?;
    let auroc_ci = if a.degenerate {
        degenerate.push("auroc".to_string());
        (0.5, 0.5)
    } else {
        auroc_interval(confidences, labels, opts.ci_resamples, opts.seed)?
    };
    let auprc = match average_precision(confidences, labels) {
        Ok(ap) => ap,
        Err(Error::Undefined(_)) => {
            degenerate.push("auprc".to_string());
            0.0
        }
        Err(e) => return Err(e),
    };
    let sel = selective_metrics(confidences, labels, &[0.90, 0.95])?;
    Ok(MetricReport {
        auroc: a.value,
        auroc_ci,
        ece: ece(confidences, labels, opts.ece_bins)?,
        brier: brier(confidences, labels)?,
        auprc,
        coverage_at_90: sel.coverage[0].1,
        coverage_at_95: sel.coverage[1].1,
        auacc: sel.auacc,
        n: confidences.len(),
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_cases() {
        let a = auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(a.value, 1.0);
        assert_eq!(auroc(&[0.5; 6], &[true, false, true, false, true, true]).unwrap().value, 0.5);
        let a = auroc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert!((a.value - 0.75).abs() < 1e-12);
        let d = auroc(&[0.3, 0.4], &[true, true]).unwrap();
        assert!(d.degenerate && d.value == 0.5);
        assert!(auroc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn ece_cases() {
        let labels: Vec<bool> = (0..10).map(|i| i < 7).collect();
        assert!(ece(&[0.7; 10], &labels, 10).unwrap().abs() < 1e-12);
        assert!((ece(&[1.0; 5], &[false; 5], 10).unwrap() - 1.0).abs() < 1e-12);
        let confs = [0.25, 0.25, 0.25, 0.25, 0.95, 0.95, 0.95, 0.95];
        let labels = [true, false, false, false, true, true, true, true];
        assert!((ece(&confs, &labels, 10).unwrap() - 0.025).abs() < 1e-12);
    }

    #[test]
    fn bin_edges_are_right_closed() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.3, 10), 2);
        assert_eq!(bin_index(0.30000001, 10), 3);
        assert_eq!(bin_index(1.0, 10), 9);
    }

    #[test]
    fn quality_cases() {
        let (b, ap) = score_quality(&[1.0, 1.0, 0.0], &[true, true, false]).unwrap();
        assert_eq!((b, ap), (0.0, 1.0));
        assert_eq!(brier(&[0.5; 4], &[true, false, true, true]).unwrap(), 0.25);
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!(matches!(average_precision(&[0.2], &[false]), Err(Error::Undefined(_))));
    }

    #[test]
    fn selective_cases() {
        let s = selective_metrics(&[0.9; 4], &[true; 4], &[0.9, 0.95]).unwrap();
        assert_eq!(s.coverage_at(0.95), Some(1.0));
        assert_eq!(s.auacc, 1.0);
        let s = selective_metrics(&[0.9, 0.8, 0.7, 0.6, 0.5], &[true, true, true, true, false], &[0.9]).unwrap();
        assert!((s.coverage_at(0.9).unwrap() - 0.8).abs() < 1e-12);
        let s = selective_metrics(&[0.3], &[true], &[0.95]).unwrap();
        assert_eq!((s.coverage_at(0.95).unwrap(), s.auacc), (1.0, 1.0));
        let s = selective_metrics(&[0.3, 0.2], &[false, false], &[0.9]).unwrap();
        assert_eq!(s.coverage_at(0.9), Some(0.0));
    }

    #[test]
    fn report_flags_degenerate_cells() {
        let r = metric_report(&[0.2, 0.7], &[false, false], &MetricOptions::default()).unwrap();
        assert_eq!(r.auroc, 0.5);
        assert_eq!(r.degenerate, vec!["auroc".to_string(), "auprc".to_string()]);
        assert_eq!(r.n, 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
            (2usize..60).prop_flat_map(|n| {
                (
                    prop::collection::vec(prop_oneof![0.0f64..=1.0, (0u8..=10).prop_map(|k| k as f64 / 10.0)], n),
                    prop::collection::vec(any::<bool>(), n),
                )
            })
        }

        proptest! {
            #[test]
            fn auroc_invariant_under_monotone_maps((c, l) in instance(), a in 0.1f64..5.0, b in -2.0f64..2.0) {
                let base = auroc(&c, &l).unwrap().value;
                let affine: Vec<f64> = c.iter().map(|x| a * x + b).collect();
                let cubic: Vec<f64> = c.iter().map(|x| x.powi(3) + x).collect();
                let logistic: Vec<f64> = c.iter().map(|x| 1.0 / (1.0 + (-8.0 * (x - 0.5)).exp())).collect();
                prop_assert!((auroc(&affine, &l).unwrap().value - base).abs() < 1e-12);
                prop_assert!((auroc(&cubic, &l).unwrap().value - base).abs() < 1e-12);
                prop_assert!((auroc(&logistic, &l).unwrap().value - base).abs() < 1e-12);
            }

            #[test]
            fn coverage_monotone_in_threshold((c, l) in instance()) {
                let taus = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0];
                let s = selective_metrics(&c, &l, &taus).unwrap();
                for w in s.coverage.windows(2) {
                    prop_assert!(w[0].1 >= w[1].1);
                }
            }

            #[test]
            fn metric_ranges((c, l) in instance()) {
                let r = metric_report(&c, &l, &MetricOptions { ci_resamples: 50, ..Default::default() }).unwrap();
                for v in [r.auroc, r.ece, r.brier, r.auprc, r.coverage_at_90, r.coverage_at_95, r.auacc] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert!(r.auroc_ci.0 <= r.auroc_ci.1);
            }
        }
    }
}
