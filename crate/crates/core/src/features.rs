//! Feature vectors for the three confidence models and fold-wise z-scoring.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnsembleRecord, GeometryFeatures, StructureFeatures};

/// Column layout of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    /// Vote confidence + structure scores + depth one-hot (9).
    M1,
    /// Vote confidence + geometry (8).
    M2,
    /// Everything plus mean verbalized confidence (17).
    M3,
}

const STRUCTURE_COLUMNS: [&str; 8] = [
    "evidence_overlap",
    "minority_new_info",
    "minority_strength",
    "majority_conf_language",
    "reasoning_complexity",
    "depth_early",
    "depth_middle",
    "depth_late",
];

const GEOMETRY_COLUMNS: [&str; 7] = [
    "overall_dispersion",
    "majority_cohesion",
    "cluster_distance",
    "minority_outlier_degree",
    "majority_centrality",
    "minority_cohesion",
    "pca_variance_ratio",
];

impl Layout {
    pub const ALL: [Layout; 3] = [Layout::M1, Layout::M2, Layout::M3];

    pub fn columns(self) -> Vec<&'static str> {
        let mut cols = vec!["c_vote"];
        match self {
            Layout::M1 => cols.extend(STRUCTURE_COLUMNS),
            Layout::M2 => cols.extend(GEOMETRY_COLUMNS),
            Layout::M3 => {
                cols.push("mean_verbalized");
                cols.extend(STRUCTURE_COLUMNS);
                cols.extend(GEOMETRY_COLUMNS);
            }
        }
        cols
    }

    pub fn len(self) -> usize {
        match self {
            Layout::M1 => 9,
            Layout::M2 => 8,
            Layout::M3 => 17,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Layout::M1 => "M1",
            Layout::M2 => "M2",
            Layout::M3 => "M3",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M1" => Ok(Layout::M1),
            "M2" => Ok(Layout::M2),
            "M3" => Ok(Layout::M3),
            other => Err(Error::Invalid(format!("unknown layout `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub layout: Layout,
    pub values: Vec<f64>,
}

/// Builds the feature vector for `layout` from a record and its analyses.
pub fn assemble_features(
    record: &EnsembleRecord,
    structure: Option<&StructureFeatures>,
    geometry: Option<&GeometryFeatures>,
    mean_verbalized: Option<f64>,
    layout: Layout,
) -> Result<FeatureVector> {
    let missing = |field| Error::MissingFeature {
        layout: layout.to_string(),
        field,
    };
    let structure_part = |s: &StructureFeatures| {
        let mut v = s.scores().to_vec();
        v.extend(s.divergence_depth.one_hot());
        v
    };

    let mut values = vec![record.vote_confidence];
    match layout {
        Layout::M1 => {
            values.extend(structure_part(structure.ok_or_else(|| missing("structure"))?));
        }
        Layout::M2 => {
            values.extend(geometry.ok_or_else(|| missing("geometry"))?.to_array());
        }
        Layout::M3 => {
            values.push(mean_verbalized.ok_or_else(|| missing("mean_verbalized"))?);
            values.extend(structure_part(structure.ok_or_else(|| missing("structure"))?));
            values.extend(geometry.ok_or_else(|| missing("geometry"))?.to_array());
        }
    }
    debug_assert_eq!(values.len(), layout.len());
    Ok(FeatureVector { layout, values })
}

/// A named-column design matrix. Ablations drop or select columns by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Design {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        for row in &rows {
            if row.len() != columns.len() {
                return Err(Error::LengthMismatch {
                    left: columns.len(),
                    right: row.len(),
                });
            }
        }
        Ok(Design { columns, rows })
    }

    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<Self> {
        let layout = vectors.first().ok_or(Error::Empty("feature vectors"))?.layout;
        let mut rows = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.layout != layout {
                return Err(Error::LayoutMismatch {
                    expected: layout.to_string(),
                    actual: v.layout.to_string(),
                });
            }
            rows.push(v.values.clone());
        }
        Design::new(layout.columns().into_iter().map(String::from).collect(), rows)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Invalid(format!("column `{name}` not in layout {:?}", self.columns)))
    }

    pub fn drop_column(&self, name: &str) -> Result<Self> {
        let idx = self.column_index(name)?;
        let keep: Vec<usize> = (0..self.n_cols()).filter(|&i| i != idx).collect();
        Ok(self.project(&keep))
    }

    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let keep = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.project(&keep))
    }

    fn project(&self, keep: &[usize]) -> Self {
        Design {
            columns: keep.iter().map(|&i| self.columns[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&i| r[i]).collect())
                .collect(),
        }
    }

    pub fn subset_rows(&self, indices: &[usize]) -> Self {
        Design {
            columns: self.columns.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Writes `id,<columns>,correct` with one line per row.
    pub fn write_csv<W: Write>(&self, mut out: W, ids: &[String], labels: &[bool]) -> std::io::Result<()> {
        writeln!(out, "id,{},correct", self.columns.join(","))?;
        for ((row, id), label) in self.rows.iter().zip(ids).zip(labels) {
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{id},{},{}", cells.join(","), u8::from(*label))?;
        }
        Ok(())
    }
}

pub(crate) const ZERO_STD: f64 = 1e-12;

/// Per-column z-scoring fitted on a training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean/std per column. Needs at least two rows.
    pub fn fit(train: &Design) -> Result<Self> {
        let n = train.n_rows();
        if n < 2 {
            return Err(Error::Invalid(format!("standardizer needs >= 2 rows, got {n}")));
        }
        let d = train.n_cols();
        let mut mean = vec![0.0; d];
        for row in &train.rows {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in &train.rows {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Standardizer {
            columns: train.columns.clone(),
            mean,
            std,
        })
    }

    fn check(&self, columns: &[String]) -> Result<()> {
        if columns != self.columns.as_slice() {
            return Err(Error::LayoutMismatch {
                expected: self.columns.join(","),
                actual: columns.join(","),
            });
        }
        Ok(())
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| if *s < ZERO_STD { x - m } else { (x - m) / s })
            .collect()
    }

    pub fn apply(&self, design: &Design) -> Result<Design> {
        self.check(&design.columns)?;
        Ok(Design {
            columns: design.columns.clone(),
            rows: design.rows.iter().map(|r| self.apply_row(r)).collect(),
        })
    }

    pub fn apply_vector(&self, vector: &FeatureVector) -> Result<FeatureVector> {
        let cols: Vec<String> = vector.layout.columns().into_iter().map(String::from).collect();
        self.check(&cols)?;
        Ok(FeatureVector {
            layout: vector.layout,
            values: self.apply_row(&vector.values),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn record(answers: &[&str]) -> EnsembleRecord {
        let question = QuestionRecord {
            id: "q1".into(),
            benchmark: Benchmark::StrategyQa,
            text: "?".into(),
            answer_format: AnswerFormat::YesNo,
            choices: vec![],
            choice_count: 2,
            gold: Label::yes(),
            provenance: None,
        };
        let ts = answers
            .iter()
            .enumerate()
            .map(|(i, a)| AgentTranscript {
                agent_index: i,
                role_name: "r".into(),
                model_id: "m".into(),
                reasoning: String::new(),
                answer: Some(Label::new(a)),
                verbalized_confidence: Some(0.5 + 0.1 * i as f64),
                prompt_tokens: 0,
                completion_tokens: 0,
            })
            .collect();
        EnsembleRecord::from_transcripts(question, ts).unwrap()
    }

    fn geometry() -> GeometryFeatures {
        GeometryFeatures {
            overall_dispersion: 0.1,
            majority_cohesion: 0.2,
            cluster_distance: 0.3,
            minority_outlier_degree: 0.4,
            majority_centrality: 0.5,
            minority_cohesion: 0.6,
            pca_variance_ratio: 0.7,
        }
    }

    #[test]
    fn unanimous_m1_defaults() {
        let rec = record(&["yes"; 5]);
        let s = StructureFeatures::unanimous_default();
        let v = assemble_features(&rec, Some(&s), None, None, Layout::M1).unwrap();
        assert_eq!(v.values, vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn m3_has_seventeen_entries_in_order() {
        let rec = record(&["yes", "yes", "no", "yes", "no"]);
        let s = StructureFeatures::from_scores([0.7, 0.2, 0.4, 0.9, 0.5], DivergenceDepth::Late);
        let g = geometry();
        let v = assemble_features(&rec, Some(&s), Some(&g), Some(0.8), Layout::M3).unwrap();
        assert_eq!(v.values.len(), 17);
        assert_eq!(
            v.values,
            vec![0.6, 0.8, 0.7, 0.2, 0.4, 0.9, 0.5, 0.0, 0.0, 1.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
        );
        let m2 = assemble_features(&rec, None, Some(&g), None, Layout::M2).unwrap();
        assert_eq!(m2.values.len(), 8);
    }

    #[test]
    fn depth_one_hot() {
        assert_eq!(DivergenceDepth::Late.one_hot(), [0.0, 0.0, 1.0]);
        assert_eq!(DivergenceDepth::None.one_hot().iter().sum::<f64>(), 0.0);
        for d in [DivergenceDepth::Early, DivergenceDepth::Middle, DivergenceDepth::Late] {
            assert_eq!(d.one_hot().iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn missing_input_names_layout_and_field() {
        let rec = record(&["yes"; 5]);
        let err = assemble_features(&rec, None, None, None, Layout::M3).unwrap_err();
        assert_eq!(err.to_string(), "layout M3: missing required input `mean_verbalized`");
        let err = assemble_features(&rec, None, None, None, Layout::M2).unwrap_err();
        assert!(err.to_string().contains("geometry"));
    }

    #[test]
    fn every_symbol_appears_once_per_layout() {
        for layout in Layout::ALL {
            let cols = layout.columns();
            assert_eq!(cols.len(), layout.len());
            let mut sorted = cols.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), cols.len(), "{layout} has duplicate columns");
        }
        let m3 = Layout::M3.columns();
        for c in Layout::M1.columns().into_iter().chain(Layout::M2.columns()) {
            assert!(m3.contains(&c));
        }
    }

    fn toy() -> Design {
        // 5x3 toy matrix; column 2 is constant.
        Design::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                vec![1.0, 10.0, 3.0],
                vec![2.0, 20.0, 3.0],
                vec![3.0, 0.0, 3.0],
                vec![4.0, 30.0, 3.0],
                vec![5.0, 40.0, 3.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn standardizer_hand_values() {
        let s = Standardizer::fit(&toy()).unwrap();
        // Column a: mean 3, population std sqrt(2). Column b: mean 20, std sqrt(200).
        assert_eq!(s.mean, vec![3.0, 20.0, 3.0]);
        assert!((s.std[0] - 2f64.sqrt()).abs() < 1e-12);
        assert!((s.std[1] - 200f64.sqrt()).abs() < 1e-12);
        let held_out = s.apply_row(&[6.0, 5.0, 4.0]);
        assert!((held_out[0] - 3.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((held_out[1] - (-15.0 / 200f64.sqrt())).abs() < 1e-12);
        // Constant column is centered, not scaled.
        assert_eq!(held_out[2], 1.0);
    }

    #[test]
    fn standardized_train_has_zero_means() {
        let d = toy();
        let s = Standardizer::fit(&d).unwrap();
        let z = s.apply(&d).unwrap();
        for j in 0..3 {
            let m: f64 = z.rows.iter().map(|r| r[j]).sum::<f64>() / 5.0;
            assert!(m.abs() < 1e-9);
        }
        assert!(z.rows.iter().all(|r| r[2] == 0.0));
    }

    #[test]
    fn standardizer_rejects_layout_mismatch() {
        let s = Standardizer::fit(&toy()).unwrap();
        let other = toy().drop_column("b").unwrap();
        assert!(matches!(s.apply(&other), Err(Error::LayoutMismatch { .. })));
        assert!(Standardizer::fit(&toy().subset_rows(&[0])).is_err());
    }

    #[test]
    fn csv_header_names_positions() {
        let d = toy().select(&["a", "c"]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf, &["r1".into(), "r2".into()], &[true, false]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("id,a,c,correct"));
        assert_eq!(lines.next(), Some("r1,1,3,1"));
        assert_eq!(lines.next(), Some("r2,2,3,0"));
    }
}
