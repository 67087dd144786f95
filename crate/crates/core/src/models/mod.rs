//! Confidence classifiers and the cross-validation harness.

mod cv;
mod logistic;
mod mlp;

pub use cv::{cross_validate, fit_and_predict, stratified_folds, CvOptions, CvPlan};
pub(crate) use logistic::sigmoid;
pub use logistic::{train_logistic, LogisticMeta, LogisticModel, LogisticOptions};
pub use mlp::{stratified_holdout, train_mlp, DropoutMasks, MlpConfig, MlpModel, MlpParams};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::features::{Design, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistic" | "lr" => Ok(ModelKind::Logistic),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::Invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    Logistic(LogisticModel),
    Mlp(MlpModel),
}

impl Classifier {
    pub fn n_features(&self) -> usize {
        match self {
            Classifier::Logistic(m) => m.n_features(),
            Classifier::Mlp(m) => m.n_features(),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            Classifier::Logistic(m) => m.predict_row(row),
            Classifier::Mlp(m) => m.predict_row(row),
        }
    }
}

/// Fits `kind` on standardized rows. An MLP with too few rows per class
/// falls back to logistic regression.
pub fn fit_classifier(
    kind: ModelKind,
    x: &[Vec<f64>],
    y: &[bool],
    logistic: &LogisticOptions,
    mlp: &MlpConfig,
) -> Result<Classifier> {
    match kind {
        ModelKind::Logistic => Ok(Classifier::Logistic(train_logistic(x, y, logistic)?)),
        ModelKind::Mlp => match train_mlp(x, y, mlp) {
            Ok(m) => Ok(Classifier::Mlp(m)),
            Err(Error::InsufficientClasses { positives, negatives, .. }) => {
                warn!(positives, negatives, "too few rows per class for the MLP; using logistic regression");
                Ok(Classifier::Logistic(train_logistic(x, y, logistic)?))
            }
            Err(e) => Err(e),
        },
    }
}

/// A classifier bundled with its standardizer and column layout. This is
/// the unit that gets serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub layout: String,
    pub standardizer: Standardizer,
    pub classifier: Classifier,
}

impl TrainedModel {
    pub fn fit(
        layout: &str,
        design: &Design,
        labels: &[bool],
        kind: ModelKind,
        logistic: &LogisticOptions,
        mlp: &MlpConfig,
    ) -> Result<Self> {
        let standardizer = Standardizer::fit(design)?;
        let z = standardizer.apply(design)?;
        let classifier = fit_classifier(kind, &z.rows, labels, logistic, mlp)?;
        Ok(TrainedModel {
            layout: layout.to_string(),
            standardizer,
            classifier,
        })
    }

    /// Probabilities for raw (unstandardized) rows.
    pub fn predict_proba(&self, design: &Design) -> Result<Vec<f64>> {
        let z = self.standardizer.apply(design)?;
        Ok(z.rows.iter().map(|r| self.classifier.predict_row(r)).collect())
    }

    /// Logistic intercept and weights mapped back to unstandardized feature
    /// units, so `sigmoid(b + w.x)` on raw rows equals `predict_proba`.
    /// `None` for the MLP.
    pub fn raw_coefficients(&self) -> Option<(f64, Vec<f64>)> {
        let Classifier::Logistic(m) = &self.classifier else {
            return None;
        };
        let s = &self.standardizer;
        let weights: Vec<f64> = m
            .weights
            .iter()
            .zip(&s.std)
            .map(|(w, &sd)| if sd < crate::features::ZERO_STD { *w } else { w / sd })
            .collect();
        let intercept = m.intercept - weights.iter().zip(&s.mean).map(|(w, mu)| w * mu).sum::<f64>();
        Some((intercept, weights))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design() -> (Design, Vec<bool>) {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.7).sin() * 3.0 + 10.0, (i % 3) as f64, i as f64 / 40.0])
            .collect();
        let labels = rows.iter().map(|r| r[0] + r[1] > 11.0).collect();
        (Design::new(vec!["a".into(), "b".into(), "c".into()], rows).unwrap(), labels)
    }

    #[test]
    fn serialization_round_trips_exactly() {
        let (d, y) = design();
        for kind in [ModelKind::Logistic, ModelKind::Mlp] {
            let m = TrainedModel::fit("toy", &d, &y, kind, &LogisticOptions::default(), &MlpConfig::default()).unwrap();
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.predict_proba(&d).unwrap(), m.predict_proba(&d).unwrap());
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let (d, y) = design();
        let m = TrainedModel::fit("toy", &d, &y, ModelKind::Logistic, &LogisticOptions::default(), &MlpConfig::default()).unwrap();
        assert!(matches!(m.predict_proba(&d.drop_column("b").unwrap()), Err(Error::LayoutMismatch { .. })));
    }

    #[test]
    fn mlp_falls_back_to_logistic() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let y = [true, false, false, false];
        let c = fit_classifier(ModelKind::Mlp, &x, &y, &LogisticOptions::default(), &MlpConfig::default()).unwrap();
        assert!(matches!(c, Classifier::Logistic(_)));
    }
}
