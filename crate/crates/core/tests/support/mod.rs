//! Naive reference implementations shared by the integration tests and the
//! acceptance harness. Each one is written for obviousness, not speed.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;

/// Fraction of (positive, negative) pairs ordered correctly, ties counting half.
pub fn naive_auroc(conf: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..conf.len() {
        for j in 0..conf.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if conf[i] > conf[j] {
                    wins += 1.0;
                } else if conf[i] == conf[j] {
                    wins += 0.5;
                }
            }
        }
    }
    if pairs == 0.0 {
        0.5
    } else {
        wins / pairs
    }
}

pub fn naive_ece(conf: &[f64], labels: &[bool], bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<usize> = (0..conf.len())
            .filter(|&i| (conf[i] > lo || (b == 0 && conf[i] >= 0.0)) && conf[i] <= hi)
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let acc = members.iter().filter(|&&i| labels[i]).count() as f64 / m;
        let mean = members.iter().map(|&i| conf[i]).sum::<f64>() / m;
        total += m / n * (acc - mean).abs();
    }
    total
}

pub fn naive_brier(conf: &[f64], labels: &[bool]) -> f64 {
    conf.iter()
        .zip(labels)
        .map(|(c, &l)| (c - if l { 1.0 } else { 0.0 }).powi(2))
        .sum::<f64>()
        / conf.len() as f64
}

/// Position of record `i` in descending confidence order, ties by index.
fn rank_of(conf: &[f64], i: usize) -> usize {
    (0..conf.len())
        .filter(|&j| conf[j] > conf[i] || (conf[j] == conf[i] && j < i))
        .count()
}

pub fn naive_ap(conf: &[f64], labels: &[bool]) -> f64 {
    let ranks: Vec<usize> = (0..conf.len()).map(|i| rank_of(conf, i)).collect();
    let positives: Vec<usize> = (0..conf.len()).filter(|&i| labels[i]).collect();
    let mut total = 0.0;
    for &i in &positives {
        let at_or_above = (0..conf.len()).filter(|&j| ranks[j] <= ranks[i]);
        let hits = at_or_above.clone().filter(|&j| labels[j]).count();
        total += hits as f64 / at_or_above.count() as f64;
    }
    total / positives.len() as f64
}

/// Accuracy of the n most confident records, for n = 1..=N.
pub fn naive_prefix_accuracy(conf: &[f64], labels: &[bool]) -> Vec<f64> {
    let n = conf.len();
    let mut ordered = vec![false; n];
    for i in 0..n {
        ordered[rank_of(conf, i)] = labels[i];
    }
    (1..=n)
        .map(|m| ordered[..m].iter().filter(|&&l| l).count() as f64 / m as f64)
        .collect()
}

pub fn naive_coverage(conf: &[f64], labels: &[bool], tau: f64) -> f64 {
    let acc = naive_prefix_accuracy(conf, labels);
    let n = conf.len();
    (1..=n)
        .filter(|&m| acc[m - 1] >= tau)
        .map(|m| m as f64 / n as f64)
        .fold(0.0, f64::max)
}

pub fn naive_auacc(conf: &[f64], labels: &[bool]) -> f64 {
    let acc = naive_prefix_accuracy(conf, labels);
    let n = conf.len() as f64;
    let mut points = vec![(0.0, acc[0])];
    points.extend(acc.iter().enumerate().map(|(i, &a)| ((i + 1) as f64 / n, a)));
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

/// Confidences on a coarse grid (many ties) or continuous, with both classes.
pub fn random_instance(rng: &mut impl Rng, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=max_n);
    let grid = rng.random_bool(0.5);
    let conf: Vec<f64> = (0..n)
        .map(|_| {
            if grid {
                rng.random_range(0..=10) as f64 / 10.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    labels[0] = true;
    labels[1] = false;
    (conf, labels)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 1.0;
    }
    1.0 - (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0)
}

fn mean_of(vs: &[Vec<f64>]) -> Vec<f64> {
    let d = vs[0].len();
    (0..d).map(|j| vs.iter().map(|v| v[j]).sum::<f64>() / vs.len() as f64).collect()
}

fn mean_pairs(vs: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for i in 0..vs.len() {
        for j in 0..vs.len() {
            if i < j {
                sum += cos_dist(&vs[i], &vs[j]);
                count += 1.0;
            }
        }
    }
    if count == 0.0 {
        0.0
    } else {
        sum / count
    }
}

/// The seven geometry features by direct double loops, in the order of
/// `GeometryFeatures::to_array` (PCA ratio from the dense D x D covariance).
pub fn brute_geometry(raw: &[Vec<f64>], majority: &[bool]) -> [f64; 7] {
    let all: Vec<Vec<f64>> = raw.iter().map(|v| unit(v)).collect();
    let maj: Vec<Vec<f64>> = all.iter().zip(majority).filter(|(_, &m)| m).map(|(v, _)| v.clone()).collect();
    let min: Vec<Vec<f64>> = all.iter().zip(majority).filter(|(_, &m)| !m).map(|(v, _)| v.clone()).collect();
    let maj_c = mean_of(&maj);
    let (cluster, outlier) = if min.is_empty() {
        (0.0, 0.0)
    } else {
        let min_c = mean_of(&min);
        let outlier = min.iter().map(|v| cos_dist(v, &maj_c)).sum::<f64>() / min.len() as f64;
        (cos_dist(&maj_c, &min_c), outlier)
    };
    [
        mean_pairs(&all),
        mean_pairs(&maj),
        cluster,
        outlier,
        cos_dist(&maj_c, &mean_of(&all)),
        mean_pairs(&min),
        dense_pca_ratio(&all),
    ]
}

/// Largest eigenvalue share of the D x D sample covariance.
pub fn dense_pca_ratio(points: &[Vec<f64>]) -> f64 {
    let k = points.len();
    let d = points[0].len();
    let mean = mean_of(points);
    let x = DMatrix::from_fn(k, d, |i, j| points[i][j] - mean[j]);
    let cov = x.transpose() * &x / (k as f64 - 1.0);
    if cov.trace() < 1e-12 {
        return 1.0;
    }
    let eig = cov.symmetric_eigen().eigenvalues;
    let top = eig.iter().cloned().fold(f64::MIN, f64::max);
    top / eig.iter().map(|e| e.max(0.0)).sum::<f64>()
}

pub fn random_cloud(rng: &mut impl Rng, k: usize, d: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Random majority mask with at least one majority member.
pub fn random_mask(rng: &mut impl Rng, k: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..k).map(|_| rng.random_bool(0.6)).collect();
    m[0] = true;
    m
}
