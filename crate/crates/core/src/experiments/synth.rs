use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AnalyzedRecord, RecordCost};
use crate::error::{Error, Result};
use crate::features::{assemble_features, Layout};
use crate::models::sigmoid;
use crate::model::{
    AgentTranscript, AggregatorOutput, AnswerFormat, Benchmark, DivergenceDepth, EnsembleRecord, GeometryFeatures,
    Label, QuestionRecord, StructureFeatures,
};

/// Planted logistic model over the 17 M3 columns, in layout order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedWeights {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl PlantedWeights {
    pub fn zeros() -> Self {
        PlantedWeights {
            intercept: 0.0,
            weights: vec![0.0; Layout::M3.len()],
        }
    }

    pub fn get(&self, column: &str) -> f64 {
        Layout::M3
            .columns()
            .iter()
            .position(|&c| c == column)
            .map_or(0.0, |i| self.weights[i])
    }

    pub fn set(&mut self, column: &str, value: f64) -> Result<()> {
        let i = Layout::M3
            .columns()
            .iter()
            .position(|&c| c == column)
            .ok_or_else(|| Error::Invalid(format!("no M3 column `{column}`")))?;
        self.weights[i] = value;
        Ok(())
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

impl Default for PlantedWeights {
    fn default() -> Self {
        let mut w = PlantedWeights {
            intercept: -4.5,
            ..PlantedWeights::zeros()
        };
        for (c, v) in [
            ("c_vote", 3.0),
            ("evidence_overlap", 1.5),
            ("minority_new_info", -1.5),
            ("minority_strength", -1.5),
            ("majority_conf_language", 1.0),
            ("reasoning_complexity", -1.0),
            ("depth_early", 2.0),
            ("depth_middle", 3.0),
            ("depth_late", 4.0),
        ] {
            w.set(c, v).expect("known column");
        }
        w
    }
}

/// Standard deviation of each feature family around its centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyNoise {
    pub structure: f64,
    pub geometry: f64,
    pub verbalized: f64,
}

impl Default for FamilyNoise {
    fn default() -> Self {
        FamilyNoise {
            structure: 0.25,
            geometry: 0.08,
            verbalized: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub k: usize,
    /// Fraction of yes/no questions; the rest are four-option.
    pub binary_fraction: f64,
    /// Relative weight of each majority size 1..=k. Sizes that cannot form
    /// a strict majority for a question's format are redrawn.
    pub majority_weights: Vec<f64>,
    pub weights: PlantedWeights,
    pub noise: FamilyNoise,
    /// Added to every structure and geometry centre, for shifted benchmarks.
    pub feature_shift: f64,
    pub benchmark: Benchmark,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_records: 1000,
            k: 5,
            binary_fraction: 0.5,
            majority_weights: vec![0.0, 0.15, 0.25, 0.25, 0.35],
            weights: PlantedWeights::default(),
            noise: FamilyNoise::default(),
            feature_shift: 0.0,
            benchmark: Benchmark::StrategyQa,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub records: Vec<AnalyzedRecord>,
    /// True correctness probability of each record.
    pub bayes: Vec<f64>,
}

impl SyntheticCorpus {
    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.record.correct).collect()
    }
}

const CHOICES: usize = 4;

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Agent answers with `m` on `majority` and the rest spread round-robin
/// over other labels, or `None` if that would not leave a unique majority.
fn answers_for(m: usize, k: usize, majority: &Label, options: &[Label]) -> Option<Vec<Label>> {
    let others: Vec<&Label> = options.iter().filter(|l| *l != majority).collect();
    let rest = k - m;
    if rest > 0 && rest.div_ceil(others.len()) >= m {
        return None;
    }
    let mut out = vec![majority.clone(); m];
    out.extend((0..rest).map(|i| others[i % others.len()].clone()));
    Some(out)
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    if spec.k < 2 {
        return Err(Error::Invalid(format!("synthetic team size {} < 2", spec.k)));
    }
    if spec.majority_weights.len() != spec.k {
        return Err(Error::Invalid(format!(
            "majority_weights has {} entries, expected k = {}",
            spec.majority_weights.len(),
            spec.k
        )));
    }
    if spec.weights.weights.len() != Layout::M3.len() {
        return Err(Error::Invalid(format!(
            "planted weights have {} entries, expected {}",
            spec.weights.weights.len(),
            Layout::M3.len()
        )));
    }
    if !(0.0..=1.0).contains(&spec.binary_fraction) {
        return Err(Error::Invalid(format!("binary_fraction {} outside [0, 1]", spec.binary_fraction)));
    }
    let feasible = |binary: bool| {
        (1..=spec.k).any(|m| {
            spec.majority_weights[m - 1] > 0.0
                && if binary { 2 * m > spec.k } else { (spec.k - m).div_ceil(CHOICES - 1) < m || m == spec.k }
        })
    };
    if (spec.binary_fraction > 0.0 && !feasible(true)) || (spec.binary_fraction < 1.0 && !feasible(false)) {
        return Err(Error::Invalid("majority_weights admit no strict majority".into()));
    }
    Ok(())
}

fn structure(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, noise: &Normal<f64>) -> StructureFeatures {
    let mut draw = |centre: f64| clamp01(centre + spec.feature_shift + spec.noise.structure * noise.sample(rng));
    let scores = [draw(0.5), draw(0.4), draw(0.4), draw(0.6), draw(0.5)];
    let depth = [DivergenceDepth::Early, DivergenceDepth::Middle, DivergenceDepth::Late][rng.random_range(0..3)];
    StructureFeatures::from_scores(scores, depth)
}

fn geometry(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, unanimous: bool, noise: &Normal<f64>) -> GeometryFeatures {
    let mut draw = |centre: f64| (centre + spec.feature_shift + spec.noise.geometry * noise.sample(rng)).clamp(0.0, 2.0);
    let overall_dispersion = draw(0.25);
    let majority_cohesion = draw(0.2);
    let (cluster_distance, minority_outlier_degree, majority_centrality, minority_cohesion) = if unanimous {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        (draw(0.15), draw(0.3), draw(0.05), draw(0.2))
    };
    let lower = 1.0 / spec.k as f64;
    let pca_variance_ratio = (0.45 + spec.feature_shift + spec.noise.geometry * noise.sample(rng)).clamp(lower, 1.0);
    GeometryFeatures {
        overall_dispersion,
        majority_cohesion,
        cluster_distance,
        minority_outlier_degree,
        majority_centrality,
        minority_cohesion,
        pca_variance_ratio,
    }
}

/// Draws a corpus of analyzed ensemble records whose correctness follows
/// the planted logistic model. Features are drawn first, then the label,
/// then the gold answer is set to agree or disagree with the majority.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::with_capacity(spec.n_records);
    let mut bayes = Vec::with_capacity(spec.n_records);

    for idx in 0..spec.n_records {
        let binary = rng.random::<f64>() < spec.binary_fraction;
        let (format, options, choice_count) = if binary {
            (AnswerFormat::YesNo, vec![Label::yes(), Label::no()], 2)
        } else {
            (AnswerFormat::MultipleChoice, (0..CHOICES).map(Label::letter).collect(), CHOICES)
        };
        let majority = options[rng.random_range(0..options.len())].clone();
        let mut answers = loop {
            let m = pick_weighted(&mut rng, &spec.majority_weights) + 1;
            if let Some(a) = answers_for(m, spec.k, &majority, &options) {
                break a;
            }
        };
        answers.shuffle(&mut rng);
        let m = answers.iter().filter(|a| **a == majority).count();
        let unanimous = m == spec.k;

        let verbalized: Vec<f64> = answers
            .iter()
            .map(|a| {
                let centre = if *a == majority { 0.55 + 0.3 * m as f64 / spec.k as f64 } else { 0.6 };
                clamp01(centre + spec.noise.verbalized * noise.sample(&mut rng))
            })
            .collect();
        let structure = if unanimous {
            StructureFeatures::unanimous_default()
        } else {
            structure(&mut rng, spec, &noise)
        };
        let geometry = geometry(&mut rng, spec, unanimous, &noise);

        let transcripts: Vec<AgentTranscript> = answers
            .iter()
            .zip(&verbalized)
            .enumerate()
            .map(|(i, (a, &v))| AgentTranscript {
                agent_index: i,
                role_name: format!("agent-{i}"),
                model_id: "synthetic".into(),
                reasoning: format!("Agent {i} weighs the options and settles on {a}."),
                answer: Some(a.clone()),
                verbalized_confidence: Some(v),
                prompt_tokens: 0,
                completion_tokens: 0,
            })
            .collect();

        // Gold is fixed after the label draw; start from the majority so the
        // vote and the feature vector can be computed.
        let mut question = QuestionRecord {
            id: format!("{}-synth-{}-{idx:05}", spec.benchmark.as_str(), spec.seed),
            benchmark: spec.benchmark,
            text: format!("Synthetic question {idx}"),
            answer_format: format,
            choices: if binary { Vec::new() } else { options.iter().map(|l| format!("option {l}")).collect() },
            choice_count,
            gold: majority.clone(),
            provenance: Some(format!("synthetic seed {}", spec.seed)),
        };
        let draft = EnsembleRecord::from_transcripts(question.clone(), transcripts.clone())?;
        let x = assemble_features(
            &draft,
            Some(&structure),
            Some(&geometry),
            draft.mean_majority_verbalized(),
            Layout::M3,
        )?;
        let p = sigmoid(spec.weights.logit(&x.values));
        let correct = rng.random::<f64>() < p;
        if !correct {
            let wrong: Vec<&Label> = options.iter().filter(|l| **l != majority).collect();
            question.gold = wrong[rng.random_range(0..wrong.len())].clone();
        }
        let record = EnsembleRecord::from_transcripts(question, transcripts)?;
        debug_assert_eq!(record.correct, correct);

        let aggregator_answer = if rng.random::<f64>() < 0.9 {
            majority.clone()
        } else {
            options[rng.random_range(0..options.len())].clone()
        };
        let aggregator = AggregatorOutput {
            answer: aggregator_answer,
            confidence: clamp01(0.4 + 0.5 * record.vote_confidence + 0.1 * noise.sample(&mut rng)),
            raw: String::new(),
            fallback: false,
        };
        let k = spec.k as u64;
        let cost = RecordCost {
            verbalized_calls: k,
            verbalized_tokens: k * rng.random_range(20..60),
            structure_calls: u64::from(!unanimous),
            structure_tokens: if unanimous { 0 } else { rng.random_range(400..900) },
            aggregator_calls: 1,
            aggregator_tokens: rng.random_range(300..700),
        };
        records.push(AnalyzedRecord {
            record,
            structure: Some(structure),
            geometry: Some(geometry),
            aggregator: Some(aggregator),
            cost,
        });
        bayes.push(p);
    }
    Ok(SyntheticCorpus { records, bayes })
}
