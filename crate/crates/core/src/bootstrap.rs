//! Percentile bootstrap over records.
//!
//! Resample `r` draws its indices from ChaCha stream `r` of the seed, so the
//! outcome does not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::auroc;

/// Draws a resample containing both classes; degenerate draws are redrawn
/// from the same stream.
fn two_class_resample(rng: &mut ChaCha8Rng, labels: &[bool]) -> Vec<usize> {
    let n = labels.len();
    loop {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let pos = idx.iter().filter(|&&i| labels[i]).count();
        if pos > 0 && pos < n {
            return idx;
        }
    }
}

fn stream(seed: u64, resample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(resample as u64);
    rng
}

fn gather<T: Copy>(values: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| values[i]).collect()
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn require_both_classes(labels: &[bool]) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Undefined("bootstrap AUROC needs both classes"));
    }
    Ok(())
}

/// 95% percentile interval of AUROC.
pub fn auroc_interval(confidences: &[f64], labels: &[bool], resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if confidences.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: confidences.len(),
            right: labels.len(),
        });
    }
    require_both_classes(labels)?;
    let mut values = Vec::with_capacity(resamples);
    for r in 0..resamples {
        let idx = two_class_resample(&mut stream(seed, r), labels);
        values.push(auroc(&gather(confidences, &idx), &gather(labels, &idx))?.value);
    }
    values.sort_by(f64::total_cmp);
    Ok((percentile(&values, 2.5), percentile(&values, 97.5)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    /// AUROC(A) - AUROC(B) on the full record set.
    pub delta_auroc: f64,
    pub ci: (f64, f64),
    pub p_value: f64,
    pub significant: bool,
    pub resamples: usize,
}

/// Paired bootstrap test of the AUROC difference between two scorers on the
/// same records.
pub fn paired_bootstrap(
    conf_a: &[f64],
    conf_b: &[f64],
    labels: &[bool],
    resamples: usize,
    seed: u64,
) -> Result<PairedComparison> {
    for other in [conf_b.len(), labels.len()] {
        if other != conf_a.len() {
            return Err(Error::LengthMismatch {
                left: conf_a.len(),
                right: other,
            });
        }
    }
    if resamples == 0 {
        return Err(Error::Invalid("paired bootstrap needs at least one resample".into()));
    }
    require_both_classes(labels)?;
    let delta_auroc = auroc(conf_a, labels)?.value - auroc(conf_b, labels)?.value;

    let mut deltas = Vec::with_capacity(resamples);
    for r in 0..resamples {
        let idx = two_class_resample(&mut stream(seed, r), labels);
        let l = gather(labels, &idx);
        let a = auroc(&gather(conf_a, &idx), &l)?.value;
        let b = auroc(&gather(conf_b, &idx), &l)?.value;
        deltas.push(a - b);
    }
    let frac_le = deltas.iter().filter(|&&d| d <= 0.0).count() as f64 / resamples as f64;
    let frac_ge = deltas.iter().filter(|&&d| d >= 0.0).count() as f64 / resamples as f64;
    let p_value = (2.0 * frac_le.min(frac_ge)).min(1.0);
    deltas.sort_by(f64::total_cmp);
    Ok(PairedComparison {
        delta_auroc,
        ci: (percentile(&deltas, 2.5), percentile(&deltas, 97.5)),
        p_value,
        significant: p_value < 0.05,
        resamples,
    })
}
