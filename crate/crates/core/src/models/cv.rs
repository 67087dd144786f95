use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LogisticOptions, MlpConfig, ModelKind, TrainedModel};
use crate::error::{Error, Result};
use crate::features::Design;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub logistic: LogisticOptions,
    pub mlp: MlpConfig,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: 5,
            seed: 42,
            logistic: LogisticOptions::default(),
            mlp: MlpConfig::default(),
        }
    }
}

/// Held-out index sets, one per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub seed: u64,
    pub test_folds: Vec<Vec<usize>>,
}

impl CvPlan {
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut train: Vec<usize> = self
            .test_folds
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        train.sort_unstable();
        train
    }
}

/// Shuffles each class with the seed and deals rows round-robin into folds,
/// continuing the deal across classes so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Result<CvPlan> {
    if folds < 2 {
        return Err(Error::Invalid(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_folds = vec![Vec::new(); folds];
    let mut slot = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            test_folds[slot % folds].push(i);
            slot += 1;
        }
    }
    for f in &mut test_folds {
        f.sort_unstable();
    }
    Ok(CvPlan { seed, test_folds })
}

/// Fits standardizer + model on the training rows and scores the test rows.
pub fn fit_and_predict(
    train: &Design,
    train_labels: &[bool],
    test: &Design,
    kind: ModelKind,
    opts: &CvOptions,
) -> Result<Vec<f64>> {
    let model = TrainedModel::fit("cv", train, train_labels, kind, &opts.logistic, &opts.mlp)?;
    model.predict_proba(test)
}

/// Out-of-fold confidence for every row of `design`.
pub fn cross_validate(design: &Design, labels: &[bool], kind: ModelKind, opts: &CvOptions) -> Result<Vec<f64>> {
    if design.n_rows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: design.n_rows(),
            right: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives < opts.folds || negatives < opts.folds {
        return Err(Error::InsufficientClasses {
            positives,
            negatives,
            required: opts.folds,
        });
    }
    let plan = stratified_folds(labels, opts.folds, opts.seed)?;
    let mut out = vec![f64::NAN; labels.len()];
    for (fold, test_idx) in plan.test_folds.iter().enumerate() {
        let train_idx = plan.train_indices(fold);
        let train = design.subset_rows(&train_idx);
        let train_labels: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
        let test = design.subset_rows(test_idx);
        let fold_opts = CvOptions {
            mlp: MlpConfig {
                seed: opts.mlp.seed.wrapping_add(fold as u64),
                ..opts.mlp
            },
            ..opts.clone()
        };
        let probs = fit_and_predict(&train, &train_labels, &test, kind, &fold_opts)?;
        for (&i, p) in test_idx.iter().zip(probs) {
            out[i] = p;
        }
    }
    Ok(out)
}
