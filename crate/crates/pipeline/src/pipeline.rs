//! End-to-end run: questions, agents, follow-ups, analyses, evaluation and
//! the output files. Every model-dependent stage is checkpointed in the
//! transcript store, so an interrupted run resumes where it stopped and a
//! finished one reruns without calls.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self, StreamExt, TryStreamExt};
use quorum_core::baselines::{MethodId, MethodScore};
use quorum_core::experiments::{
    ablate, cost_report, cross_benchmark, evaluate, feature_importance, learned_layout, tier_analysis, AblationPlan,
    AnalyzedRecord, CostLedger, CrossSection, EvaluateOptions, EvaluationReport, RecordCost,
};
use quorum_core::features::Layout;
use quorum_core::geometry::compute_geometry;
use quorum_core::metrics::MetricOptions;
use quorum_core::model::{AggregatorOutput, AgentTranscript, Benchmark, EnsembleRecord, GeometryFeatures, QuestionRecord, StructureFeatures};
use quorum_core::models::{CvOptions, ModelKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use crate::client::{CachedChat, CachedEmbedder, ChatBackend, EmbeddingBackend, HttpBackend};
use crate::config::{AnalysisToggles, RunConfig};
use crate::error::{PipelineError, Result};
use crate::export::{score_rows, write_features_csv, write_scores_csv};
use crate::ingest::{load_benchmark, write_jsonl, IngestOptions};
use crate::mock::{FixtureEmbeddings, Simulator, SimulatorConfig};
use crate::orchestrate::{CallTally, Orchestrator};
use crate::store::{cache_key, CallCache, Stage, TranscriptStore};

/// Placeholder embedded for an agent that produced no text.
pub const EMPTY_REASONING: &str = "(no response)";

/// The model server a run talks to.
pub struct Backends {
    pub chat: Arc<dyn ChatBackend>,
    pub embed: Arc<dyn EmbeddingBackend>,
    /// Enters the stage hashes, so simulated and real transcripts never mix.
    pub identity: String,
    /// Overrides the configured embedding dimension.
    pub embedding_dim: Option<Option<usize>>,
}

impl Backends {
    /// The simulator, with fixture embeddings when `<dir>/embeddings.jsonl`
    /// exists.
    pub fn mock(dir: Option<&Path>, questions: &[QuestionRecord]) -> Result<Self> {
        let config = match dir {
            Some(d) => SimulatorConfig::from_dir(d)?,
            None => SimulatorConfig::default(),
        };
        let identity = config.identity();
        let dim = config.embedding_dim;
        let sim = Arc::new(Simulator::new(config, questions));
        let fixture = dir.map(|d| d.join("embeddings.jsonl")).filter(|p| p.exists());
        Ok(match fixture {
            Some(path) => Backends {
                chat: sim,
                embed: Arc::new(FixtureEmbeddings::load(&path)?),
                identity: format!("{identity}:fixture"),
                embedding_dim: Some(None),
            },
            None => Backends {
                chat: sim.clone(),
                embed: sim,
                identity,
                embedding_dim: Some(Some(dim)),
            },
        })
    }

    pub fn http(config: &RunConfig) -> Result<Self> {
        let team = &config.team.endpoint;
        let chat = HttpBackend::new(
            &team.base_url,
            team.resolve_key(),
            config.team.retry,
            Duration::from_secs(team.timeout_secs),
        )?;
        let ep = config.embedding.endpoint.as_ref().unwrap_or(team);
        let embed = HttpBackend::new(&ep.base_url, ep.resolve_key(), config.team.retry, Duration::from_secs(ep.timeout_secs))?;
        Ok(Backends {
            chat: Arc::new(chat),
            embed: Arc::new(embed),
            identity: "openai-compatible".into(),
            embedding_dim: None,
        })
    }

    /// Simulator when `mock` is set or the config names a mock directory.
    pub fn from_config(config: &RunConfig, questions: &[QuestionRecord], mock: bool) -> Result<Self> {
        if mock || config.mock_dir.is_some() {
            Backends::mock(config.mock_dir.as_deref(), questions)
        } else {
            Backends::http(config)
        }
    }
}

/// Counters for one run. Kept out of the report so that warm and cold
/// runs produce the same report bytes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub questions: usize,
    pub records: usize,
    pub dropped: usize,
    pub chat_calls: u64,
    pub embedding_calls: u64,
    pub store_hits: u64,
    pub store_misses: u64,
    pub structure_calls: u64,
}

pub struct RunOutput {
    pub report: EvaluationReport,
    pub records: Vec<AnalyzedRecord>,
    pub scores: Vec<MethodScore>,
    pub stats: RunStats,
    pub report_path: PathBuf,
}

/// Which optional stages the selected methods and analyses need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePlan {
    pub verbalized: bool,
    pub structure: bool,
    pub aggregate: bool,
    pub embeddings: bool,
}

impl StagePlan {
    pub fn for_config(config: &RunConfig) -> Self {
        let has = |m: MethodId| config.methods.contains(&m);
        StagePlan {
            verbalized: has(MethodId::B3) || has(MethodId::M3),
            structure: has(MethodId::M1) || has(MethodId::M3) || config.analyses.tiers,
            aggregate: has(MethodId::B6),
            embeddings: has(MethodId::B5) || has(MethodId::M2) || has(MethodId::M3),
        }
    }
}

fn digest<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

/// Per-stage config hashes. Each downstream stage hashes over the agent
/// stage plus its own settings, so changing one stage only invalidates it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageHashes {
    pub agents: String,
    pub verbalized: String,
    pub structure: String,
    pub aggregate: String,
    pub embeddings: String,
}

impl StageHashes {
    pub fn new(config: &RunConfig, identity: &str, embedding_dim: Option<usize>) -> Result<Self> {
        let team = &config.team;
        let prompts = config.prompts()?;
        let agents = digest(&(
            identity,
            team.resolve_agents()?,
            team.agent_temperature,
            team.agent_max_tokens,
            prompts.agent_version(),
        ))?;
        let analysis = (team.analysis_model(), team.analysis_temperature);
        Ok(StageHashes {
            verbalized: digest(&(&agents, analysis, team.verbalized_max_tokens, prompts.verbalized_version()))?,
            structure: digest(&(&agents, analysis, team.analysis_max_tokens, prompts.structure_version()))?,
            aggregate: digest(&(&agents, analysis, team.aggregator_max_tokens, prompts.aggregator_version()))?,
            embeddings: digest(&(&agents, identity, &config.embedding.model, embedding_dim))?,
            agents,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tallied<T> {
    value: T,
    tally: CallTally,
}

/// Store key: the question id plus a hash of its content, so an edited
/// question is recomputed.
fn record_key(q: &QuestionRecord) -> String {
    format!("{}#{}", q.id, &cache_key(q).as_str()[..16])
}

/// Loads every configured benchmark, honouring the subject filter and the
/// per-benchmark limit.
pub fn load_questions(config: &RunConfig) -> Result<Vec<QuestionRecord>> {
    let opts = IngestOptions {
        mmlu_subjects: config.ingest.mmlu_subjects.clone(),
    };
    let mut out = Vec::new();
    for source in &config.benchmarks {
        let mut qs = load_benchmark(source.kind, &source.path, &opts)?;
        if let Some(n) = config.ingest.limit {
            qs.truncate(n);
        }
        info!(benchmark = source.kind.as_str(), questions = qs.len(), "loaded");
        out.extend(qs);
    }
    Ok(out)
}

struct Runner<'a> {
    store: &'a TranscriptStore,
    concurrency: usize,
}

impl Runner<'_> {
    /// Runs `compute` for every item whose payload is not in the store, at
    /// most `concurrency` at a time, and writes results back in input order.
    async fn stage<'i, I, T, F, Fut>(&self, stage: Stage, hash: &str, items: &'i [I], key: impl Fn(&I) -> (Benchmark, String), compute: F) -> Result<Vec<T>>
    where
        T: Serialize + DeserializeOwned,
        F: Fn(&'i I) -> Fut,
        Fut: std::future::Future<Output = Result<T>>,
    {
        let store = self.store;
        let mut results = stream::iter(items.iter())
            .map(|item| {
                let (bm, k) = key(item);
                let fut = compute(item);
                async move {
                    if let Some(hit) = store.get_as::<T>(bm, stage, hash, &k)? {
                        return Ok::<_, PipelineError>((bm, k, hit, false));
                    }
                    Ok::<_, PipelineError>((bm, k, fut.await?, true))
                }
            })
            .buffered(self.concurrency.max(1));
        // Written in input order, so stores are byte-identical across runs.
        let mut out = Vec::with_capacity(items.len());
        let run = async {
            while let Some((bm, k, value, fresh)) = results.try_next().await? {
                if fresh {
                    store.put_as(bm, stage, hash, &k, &value)?;
                }
                out.push(value);
            }
            Ok::<_, PipelineError>(())
        };
        run.await.map_err(|e| e.in_stage(stage.as_str()))?;
        Ok(out)
    }
}

pub fn kind_str(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Logistic => "logistic",
        ModelKind::Mlp => "mlp",
    }
}

/// Runs the whole pipeline against real or simulated backends.
pub async fn run_pipeline(config: &RunConfig, mock: bool) -> Result<RunOutput> {
    let questions = load_questions(config)?;
    let backends = Backends::from_config(config, &questions, mock)?;
    run_with_backends(config, questions, backends).await
}

pub async fn run_with_backends(config: &RunConfig, questions: Vec<QuestionRecord>, backends: Backends) -> Result<RunOutput> {
    config.validate()?;
    if questions.is_empty() {
        return Err(quorum_core::Error::Empty("no questions loaded").into());
    }
    let plan = StagePlan::for_config(config);
    let embedding_dim = backends.embedding_dim.unwrap_or(config.embedding.dim);
    let hashes = StageHashes::new(config, &backends.identity, embedding_dim)?;
    let store = TranscriptStore::open(config.store_dir())?;
    let cache = Arc::new(CallCache::open(config.cache_dir())?);
    let concurrency = config.team.concurrency;
    let chat = Arc::new(CachedChat::new(backends.chat, Some(cache.clone()), concurrency));
    let embedder = CachedEmbedder::new(
        backends.embed,
        Some(cache),
        &config.embedding.model,
        embedding_dim,
        config.embedding.batch_size,
        concurrency,
    );
    let orch = Orchestrator::new(chat.clone(), config.prompts()?, config.team.clone())?;
    let runner = Runner {
        store: &store,
        concurrency,
    };
    let by_question = |q: &QuestionRecord| (q.benchmark, record_key(q));
    let by_record = |r: &EnsembleRecord| (r.question.benchmark, record_key(&r.question));

    let transcripts: Vec<Vec<AgentTranscript>> = runner
        .stage(Stage::Agents, &hashes.agents, &questions, by_question, |q| orch.run_agents(q))
        .await?;

    let mut notes = Vec::new();
    let mut ensembles = Vec::new();
    for (q, ts) in questions.iter().zip(transcripts) {
        match EnsembleRecord::from_transcripts(q.clone(), ts) {
            Ok(r) => ensembles.push(r),
            Err(quorum_core::Error::Abstain(_)) => {
                warn!(question = %q.id, "every agent answer failed to parse; dropping");
                notes.push(format!("dropped {}: no agent answer could be parsed", q.id));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let dropped = questions.len() - ensembles.len();

    let mut verbalized_tally: Vec<CallTally> = Vec::new();
    if plan.verbalized {
        let got: Vec<Tallied<Vec<Option<f64>>>> = runner
            .stage(Stage::Verbalized, &hashes.verbalized, &ensembles, by_record, |r| async {
                let (value, tally) = orch.verbalized_for_record(r).await?;
                Ok(Tallied { value, tally })
            })
            .await?;
        for (r, g) in ensembles.iter_mut().zip(&got) {
            for (t, c) in r.transcripts.iter_mut().zip(&g.value) {
                t.verbalized_confidence = *c;
            }
        }
        verbalized_tally = got.iter().map(|g| g.tally).collect();
    }
    let mut records: Vec<AnalyzedRecord> = ensembles
        .iter()
        .map(|r| AnalyzedRecord {
            record: r.clone(),
            structure: None,
            geometry: None,
            aggregator: None,
            cost: RecordCost::default(),
        })
        .collect();
    for (r, t) in records.iter_mut().zip(&verbalized_tally) {
        r.cost.verbalized_calls = t.calls;
        r.cost.verbalized_tokens = t.tokens;
    }

    let mut structure_calls = 0;
    if plan.structure {
        let got: Vec<Tallied<StructureFeatures>> = runner
            .stage(Stage::Structure, &hashes.structure, &ensembles, by_record, |r| async {
                let (value, tally) = orch.analyze_structure(r).await?;
                Ok(Tallied { value, tally })
            })
            .await?;
        for (r, g) in records.iter_mut().zip(got) {
            structure_calls += g.tally.calls;
            r.cost.structure_calls = g.tally.calls;
            r.cost.structure_tokens = g.tally.tokens;
            r.structure = Some(g.value);
        }
    }

    if plan.aggregate {
        let got: Vec<Tallied<AggregatorOutput>> = runner
            .stage(Stage::Aggregate, &hashes.aggregate, &ensembles, by_record, |r| async {
                let (value, tally) = orch.llm_aggregate(r).await?;
                Ok(Tallied { value, tally })
            })
            .await?;
        for (r, g) in records.iter_mut().zip(got) {
            r.cost.aggregator_calls = g.tally.calls;
            r.cost.aggregator_tokens = g.tally.tokens;
            r.aggregator = Some(g.value);
        }
    }

    if plan.embeddings {
        let got: Vec<GeometryFeatures> = runner
            .stage(Stage::Embeddings, &hashes.embeddings, &ensembles, by_record, |r| {
                let texts: Vec<String> = r
                    .transcripts
                    .iter()
                    .map(|t| {
                        if t.reasoning.trim().is_empty() {
                            EMPTY_REASONING.to_string()
                        } else {
                            t.reasoning.clone()
                        }
                    })
                    .collect();
                let mask = r.majority_mask();
                let embedder = &embedder;
                async move {
                    let set = embedder.embed_texts(&texts).await?;
                    Ok(compute_geometry(&set, &mask)?)
                }
            })
            .await?;
        for (r, g) in records.iter_mut().zip(got) {
            r.geometry = Some(g);
        }
    }

    let (mut report, scores) = analyse(&records, &config.methods, &config.analyses, config.seed).map_err(|e| e.in_stage("evaluate"))?;
    report.notes.splice(0..0, notes);
    report.config_hash = Some(config.config_hash()?);

    let report_path = write_outputs(&config.output_dir, &report, &records, &scores)?;
    let stats = RunStats {
        questions: questions.len(),
        records: records.len(),
        dropped,
        chat_calls: chat.network_calls(),
        embedding_calls: embedder.network_calls(),
        store_hits: store.counters().hits(),
        store_misses: store.counters().misses(),
        structure_calls,
    };
    fs::write(config.output_dir.join("run_stats.json"), serde_json::to_string_pretty(&stats)?)
        .map_err(|e| PipelineError::io(config.output_dir.join("run_stats.json"), e))?;
    info!(?stats, report = %report_path.display(), "run finished");
    Ok(RunOutput {
        report,
        records,
        scores,
        stats,
        report_path,
    })
}

pub fn evaluate_options(seed: u64, resamples: usize) -> EvaluateOptions {
    EvaluateOptions {
        cv: CvOptions {
            seed,
            ..CvOptions::default()
        },
        metrics: MetricOptions {
            seed,
            ci_resamples: resamples,
            ..MetricOptions::default()
        },
        bootstrap_resamples: resamples,
        ..EvaluateOptions::default()
    }
}

/// Evaluation plus every enabled analysis. A failing optional analysis
/// becomes a note in the report instead of ending the run.
pub fn analyse(
    records: &[AnalyzedRecord],
    methods: &[MethodId],
    a: &AnalysisToggles,
    seed: u64,
) -> Result<(EvaluationReport, Vec<MethodScore>)> {
    let opts = evaluate_options(seed, a.bootstrap_resamples);
    let (mut report, scores) = evaluate(records, methods, &opts)?;
    let learned: Vec<(MethodId, Layout, ModelKind)> = methods
        .iter()
        .filter_map(|&m| learned_layout(m).map(|(l, k)| (m, l, k)))
        .collect();
    let benchmarks: BTreeMap<Benchmark, Vec<AnalyzedRecord>> = records.iter().fold(BTreeMap::new(), |mut acc, r| {
        acc.entry(r.record.question.benchmark).or_insert_with(Vec::new).push(r.clone());
        acc
    });
    let mut notes = Vec::new();

    if a.tiers {
        match tier_analysis(records, &scores) {
            Ok(t) => report.tiers = Some(t),
            Err(e) => notes.push(format!("tier analysis skipped: {e}")),
        }
    }
    if a.cross_benchmark && benchmarks.len() >= 2 {
        let mut sections = Vec::new();
        for &(m, layout, kind) in &learned {
            match cross_benchmark(records, layout, kind, &opts.cv) {
                Ok(rows) => sections.push(CrossSection {
                    layout: layout.as_str().to_string(),
                    model: kind_str(kind).to_string(),
                    rows,
                }),
                Err(e) => notes.push(format!("cross-benchmark {} skipped: {e}", m.as_str())),
            }
        }
        report.cross_benchmark = Some(sections);
    }
    if a.ablation {
        let mut out = Vec::new();
        let max_k = records.iter().map(|r| r.record.k()).min().unwrap_or(0);
        let mut scopes: Vec<(String, &[AnalyzedRecord])> =
            benchmarks.iter().map(|(b, rs)| (b.as_str().to_string(), rs.as_slice())).collect();
        if benchmarks.len() > 1 {
            scopes.push(("pooled".into(), records));
        }
        for &(m, layout, kind) in &learned {
            let mut plan = AblationPlan::new(layout, kind);
            plan.agent_counts = a.agent_counts.iter().copied().filter(|&n| n <= max_k).collect();
            for (scope, rs) in &scopes {
                match ablate(rs, &plan, &opts.cv) {
                    Ok(mut r) => {
                        r.scope = scope.clone();
                        out.push(r);
                    }
                    Err(e) => notes.push(format!("ablation {} on {scope} skipped: {e}", m.as_str())),
                }
            }
        }
        report.ablation = Some(out);
    }
    if a.cost {
        let ledger = CostLedger::from_records(records, methods);
        report.cost = Some(cost_report(&ledger, &scores));
    }
    if a.feature_importance {
        let mut out = Vec::new();
        for &(m, layout, _) in learned.iter().filter(|(m, _, _)| matches!(m, MethodId::M1 | MethodId::M2)) {
            match feature_importance(records, layout, &opts.cv) {
                Ok(s) => out.push(s),
                Err(e) => notes.push(format!("feature importance {} skipped: {e}", m.as_str())),
            }
        }
        report.feature_importance = Some(out);
    }
    report.notes.extend(notes);
    Ok((report, scores))
}

/// Writes report.json, records.jsonl, scores.csv and one features CSV per
/// layout whose inputs are present. Returns the report path.
pub fn write_outputs(dir: &Path, report: &EvaluationReport, records: &[AnalyzedRecord], scores: &[MethodScore]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let report_path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(&report_path, text).map_err(|e| PipelineError::io(&report_path, e))?;
    write_jsonl(&dir.join("records.jsonl"), records)?;
    let benchmark_of: BTreeMap<String, String> = records
        .iter()
        .map(|r| (r.id().to_string(), r.record.question.benchmark.as_str().to_string()))
        .collect();
    write_scores_csv(&dir.join("scores.csv"), &score_rows(scores, &benchmark_of))?;
    for layout in Layout::ALL {
        let path = dir.join(format!("features_{}.csv", layout.as_str().to_ascii_lowercase()));
        match write_features_csv(&path, records, layout) {
            Ok(()) => {}
            Err(PipelineError::Core(quorum_core::Error::MissingFeature { .. })) => {
                let _ = fs::remove_file(&path);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report_path)
}
