//! Cosine geometry of the agents' reasoning embeddings.
//!
//! All vectors are L2-normalized before any centroid or distance is taken.
//! Centroids are plain means of the unit vectors and are not re-normalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, symmetric_eigenvalues};
use crate::model::GeometryFeatures;

const ZERO_NORM: f64 = 1e-12;
const DEGENERATE_VARIANCE: f64 = 1e-12;

/// K embedding vectors of a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    vectors: Vec<Vec<f64>>,
    normalized: bool,
}

impl EmbeddingSet {
    /// Validates a common dimension (and `expected_dim`, when given).
    pub fn new(vectors: Vec<Vec<f64>>, expected_dim: Option<usize>) -> Result<Self> {
        let first = vectors.first().ok_or(Error::Empty("embedding set"))?;
        let dim = expected_dim.unwrap_or(first.len());
        if dim == 0 {
            return Err(Error::Empty("zero-dimensional embedding"));
        }
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
        }
        Ok(EmbeddingSet {
            vectors,
            normalized: false,
        })
    }

    /// Returns a copy with every vector scaled to unit L2 norm.
    pub fn normalized(&self) -> Result<Self> {
        if self.normalized {
            return Ok(self.clone());
        }
        let vectors = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let n = norm(v);
                if n < ZERO_NORM || !n.is_finite() {
                    Err(Error::ZeroNorm(i))
                } else {
                    Ok(v.iter().map(|x| x / n).collect())
                }
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(EmbeddingSet {
            vectors,
            normalized: true,
        })
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }
}

/// `1 - cos(u, v)`, in [0, 2].
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < ZERO_NORM {
        return Err(Error::ZeroNorm(0));
    }
    if nv < ZERO_NORM {
        return Err(Error::ZeroNorm(1));
    }
    let cos = (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Distance between two centroids. A centroid that cancels to the origin has
/// no direction; it is treated as orthogonal to everything (distance 1).
fn centroid_distance(a: &[f64], b: &[f64]) -> f64 {
    cosine_distance(a, b).unwrap_or(1.0)
}

fn centroid<'a>(vectors: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        n += 1;
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

fn mean_pairwise(vectors: &[&Vec<f64>]) -> f64 {
    let k = vectors.len();
    if k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            // Unit vectors: distance is 1 - dot.
            total += 1.0 - dot(vectors[i], vectors[j]).clamp(-1.0, 1.0);
        }
    }
    total / (k * (k - 1) / 2) as f64
}

/// First principal component's share of total variance, via the K x K
/// centered Gram matrix. Returns 1.0 for a collapsed cloud.
pub fn pca_first_ratio(vectors: &[Vec<f64>]) -> f64 {
    let k = vectors.len();
    if k < 2 {
        return 1.0;
    }
    let dim = vectors[0].len();
    let mean = centroid(vectors.iter(), dim).expect("non-empty");
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let scale = 1.0 / (k - 1) as f64;
    let gram: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| dot(&centered[i], &centered[j]) * scale).collect())
        .collect();
    let total: f64 = (0..k).map(|i| gram[i][i]).sum();
    if total < DEGENERATE_VARIANCE {
        return 1.0;
    }
    let eig = symmetric_eigenvalues(&gram);
    let positive: f64 = eig.iter().map(|&e| e.max(0.0)).sum();
    (eig[0].max(0.0) / positive).clamp(0.0, 1.0)
}

/// The seven geometry features for one record.
///
/// `majority_mask[k]` marks agents holding the majority answer.
pub fn compute_geometry(embeddings: &EmbeddingSet, majority_mask: &[bool]) -> Result<GeometryFeatures> {
    let k = embeddings.len();
    if k < 2 {
        return Err(Error::Invalid(format!("geometry needs K >= 2 embeddings, got {k}")));
    }
    if majority_mask.len() != k {
        return Err(Error::LengthMismatch {
            left: k,
            right: majority_mask.len(),
        });
    }
    if !majority_mask.iter().any(|&m| m) {
        return Err(Error::Invalid("majority mask marks no agent".into()));
    }
    let unit = embeddings.normalized()?;
    let vectors = unit.vectors();
    let dim = unit.dim();

    let all: Vec<&Vec<f64>> = vectors.iter().collect();
    let majority: Vec<&Vec<f64>> = vectors
        .iter()
        .zip(majority_mask)
        .filter_map(|(v, &m)| m.then_some(v))
        .collect();
    let minority: Vec<&Vec<f64>> = vectors
        .iter()
        .zip(majority_mask)
        .filter_map(|(v, &m)| (!m).then_some(v))
        .collect();

    let global_c = centroid(all.iter().copied(), dim).expect("k >= 2");
    let majority_c = centroid(majority.iter().copied(), dim).expect("majority non-empty");
    let minority_c = centroid(minority.iter().copied(), dim);

    let (cluster_distance, minority_outlier_degree) = match &minority_c {
        None => (0.0, 0.0),
        Some(min_c) => {
            let outlier = minority
                .iter()
                .map(|v| centroid_distance(v, &majority_c))
                .sum::<f64>()
                / minority.len() as f64;
            (centroid_distance(&majority_c, min_c), outlier)
        }
    };

    Ok(GeometryFeatures {
        overall_dispersion: mean_pairwise(&all),
        majority_cohesion: mean_pairwise(&majority),
        cluster_distance,
        minority_outlier_degree,
        majority_centrality: centroid_distance(&majority_c, &global_c),
        minority_cohesion: mean_pairwise(&minority),
        pca_variance_ratio: pca_first_ratio(vectors),
    })
}
