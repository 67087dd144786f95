use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quorum_core::baselines::MethodId;
use quorum_core::experiments::{
    ablate, build_design, cost_report, cross_benchmark, score_methods, synth_generate, tier_analysis, AblationPlan,
    AnalyzedRecord, CostLedger, CrossSection, EvaluationReport, SyntheticSpec,
};
use quorum_core::features::Layout;
use quorum_core::metrics::{metric_report, MetricOptions};
use quorum_core::model::Benchmark;
use quorum_core::models::{cross_validate, CvOptions, ModelKind, TrainedModel};
use quorum_pipeline::config::{AnalysisToggles, RunConfig};
use quorum_pipeline::error::{PipelineError, Result};
use quorum_pipeline::export::{evaluate_scores, read_scores_csv};
use quorum_pipeline::ingest::{load_benchmark, read_jsonl, write_jsonl, IngestOptions, DEFAULT_MMLU_SUBJECTS};
use quorum_pipeline::pipeline::{analyse, kind_str, run_pipeline, write_outputs};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "quorum", version, about = "Multi-agent ensemble confidence estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a raw benchmark file into <out>/<benchmark>/questions.jsonl.
    Ingest {
        #[arg(long)]
        benchmark: Benchmark,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// MMLU subjects to keep; `all` keeps every subject.
        #[arg(long, value_delimiter = ',')]
        subjects: Option<Vec<String>>,
    },
    /// Run the ensemble, the analyses and the evaluation.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to the configured benchmarks of these kinds.
        #[arg(long, value_delimiter = ',')]
        benchmark: Vec<Benchmark>,
        /// Use the built-in simulator, configured from this directory.
        #[arg(long, num_args = 0..=1)]
        mock: Option<Option<PathBuf>>,
    },
    /// Cross-validate one layout and model on analyzed records and save a
    /// model fitted on all of them.
    TrainEval {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        layout: Layout,
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Metrics for a scores CSV (id,benchmark,method,confidence,correct).
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
    },
    /// Per-tier AUROC of every method.
    Tiers(OfflineArgs),
    /// Leave-one-benchmark-out transfer of the learned methods.
    Crossbm(OfflineArgs),
    /// Drop-one-feature, vote-only and agent-count ablations.
    Ablate(OfflineArgs),
    /// Extra calls and tokens per method.
    Cost(OfflineArgs),
    /// Generate a synthetic analyzed corpus with planted signal.
    Synth {
        /// TOML generator settings; flags below override them.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        benchmark: Option<Benchmark>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate analyzed records into a full report, or print a summary of
    /// an existing report.
    Report {
        /// records.jsonl to evaluate (writes the report next to --out).
        #[arg(long, conflicts_with = "show")]
        records: Option<PathBuf>,
        #[arg(long, requires = "records")]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<MethodId>>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// report.json to summarize.
        #[arg(long)]
        show: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct OfflineArgs {
    /// records.jsonl written by `run` or `synth`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodId>>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn load_records(path: &Path) -> Result<Vec<AnalyzedRecord>> {
    let records: Vec<AnalyzedRecord> = read_jsonl(path)?;
    if records.is_empty() {
        return Err(quorum_core::Error::Empty("records file").into());
    }
    Ok(records)
}

/// Methods the records can support, when none are named.
fn available_methods(records: &[AnalyzedRecord]) -> Vec<MethodId> {
    let all = |f: fn(&AnalyzedRecord) -> bool| records.iter().all(f);
    let structure = all(|r| r.structure.is_some());
    let geometry = all(|r| r.geometry.is_some());
    let verbalized = records.iter().any(|r| r.record.mean_majority_verbalized().is_some());
    MethodId::ALL
        .into_iter()
        .filter(|m| match m {
            MethodId::B3 => verbalized,
            MethodId::B5 | MethodId::M2 => geometry,
            MethodId::B6 => all(|r| r.aggregator.is_some()),
            MethodId::M1 => structure,
            MethodId::M3 => structure && geometry && verbalized,
            _ => true,
        })
        .collect()
}

fn learned(methods: &[MethodId]) -> Vec<(Layout, ModelKind)> {
    methods.iter().filter_map(|&m| quorum_core::experiments::learned_layout(m)).collect()
}

fn cv(seed: u64) -> CvOptions {
    CvOptions {
        seed,
        ..CvOptions::default()
    }
}

async fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            benchmark,
            input,
            out,
            subjects,
        } => {
            let mmlu_subjects = match subjects {
                Some(s) if s.iter().any(|x| x == "all") => Vec::new(),
                Some(s) => s,
                None => DEFAULT_MMLU_SUBJECTS.iter().map(|s| s.to_string()).collect(),
            };
            let records = load_benchmark(benchmark, &input, &IngestOptions { mmlu_subjects })?;
            let dir = out.join(benchmark.as_str());
            fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
            let path = dir.join("questions.jsonl");
            write_jsonl(&path, &records)?;
            println!("{} questions -> {}", records.len(), path.display());
        }
        Command::Run { config, benchmark, mock } => {
            let mut cfg = RunConfig::load(&config)?;
            if !benchmark.is_empty() {
                cfg.benchmarks.retain(|b| benchmark.contains(&b.kind));
                if cfg.benchmarks.is_empty() {
                    return Err(PipelineError::Config("no configured benchmark matches --benchmark".into()));
                }
            }
            let use_mock = mock.is_some();
            if let Some(dir) = mock.flatten() {
                cfg.mock_dir = Some(dir);
            }
            let out = run_pipeline(&cfg, use_mock).await?;
            println!(
                "{} records ({} dropped), {} chat calls, {} embedding calls -> {}",
                out.stats.records,
                out.stats.dropped,
                out.stats.chat_calls,
                out.stats.embedding_calls,
                out.report_path.display()
            );
        }
        Command::TrainEval {
            records,
            layout,
            model,
            out,
            seed,
        } => {
            let records = load_records(&records)?;
            let design = build_design(&records, layout)?;
            let labels: Vec<bool> = records.iter().map(|r| r.record.correct).collect();
            let opts = cv(seed);
            let oof = cross_validate(&design, &labels, model, &opts)?;
            let metrics = metric_report(&oof, &labels, &MetricOptions { seed, ..Default::default() })?;
            let fitted = TrainedModel::fit(layout.as_str(), &design, &labels, model, &opts.logistic, &opts.mlp)?;
            fs::create_dir_all(&out).map_err(|e| PipelineError::io(&out, e))?;
            fs::write(out.join("model.json"), fitted.to_json()?).map_err(|e| PipelineError::io(out.join("model.json"), e))?;
            write_json(
                &out.join("cv_metrics.json"),
                &serde_json::json!({
                    "layout": layout.as_str(),
                    "model": kind_str(model),
                    "folds": opts.folds,
                    "seed": seed,
                    "metrics": metrics,
                }),
            )?;
            println!("{layout}/{}: out-of-fold AUROC {:.4} on {} records", kind_str(model), metrics.auroc, metrics.n);
        }
        Command::Evaluate {
            scores,
            out,
            seed,
            resamples,
        } => {
            let rows = read_scores_csv(&scores)?;
            let opts = MetricOptions {
                seed,
                ci_resamples: resamples,
                ..Default::default()
            };
            write_json(&out, &evaluate_scores(&rows, &opts, resamples)?)?;
            println!("{} score rows -> {}", rows.len(), out.display());
        }
        Command::Tiers(a) => {
            let records = load_records(&a.records)?;
            let methods = a.methods.unwrap_or_else(|| available_methods(&records));
            let scores = score_methods(&records, &methods, &cv(a.seed))?;
            write_json(&a.out, &tier_analysis(&records, &scores)?)?;
        }
        Command::Crossbm(a) => {
            let records = load_records(&a.records)?;
            let methods = a.methods.unwrap_or_else(|| available_methods(&records));
            let mut sections = Vec::new();
            for (layout, kind) in learned(&methods) {
                sections.push(CrossSection {
                    layout: layout.as_str().to_string(),
                    model: kind_str(kind).to_string(),
                    rows: cross_benchmark(&records, layout, kind, &cv(a.seed))?,
                });
            }
            write_json(&a.out, &sections)?;
        }
        Command::Ablate(a) => {
            let records = load_records(&a.records)?;
            let methods = a.methods.unwrap_or_else(|| available_methods(&records));
            let max_k = records.iter().map(|r| r.record.k()).min().unwrap_or(0);
            let mut out = Vec::new();
            for (layout, kind) in learned(&methods) {
                let mut plan = AblationPlan::new(layout, kind);
                plan.agent_counts.retain(|&n| n <= max_k);
                let mut r = ablate(&records, &plan, &cv(a.seed))?;
                r.scope = "pooled".into();
                out.push(r);
            }
            write_json(&a.out, &out)?;
        }
        Command::Cost(a) => {
            let records = load_records(&a.records)?;
            let methods = a.methods.unwrap_or_else(|| available_methods(&records));
            let scores = score_methods(&records, &methods, &cv(a.seed))?;
            let ledger = CostLedger::from_records(&records, &methods);
            write_json(&a.out, &cost_report(&ledger, &scores))?;
        }
        Command::Synth {
            spec,
            n,
            seed,
            benchmark,
            out,
        } => {
            let mut s = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| PipelineError::io(&p, e))?;
                    toml::from_str::<SyntheticSpec>(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(n) = n {
                s.n_records = n;
            }
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(b) = benchmark {
                s.benchmark = b;
            }
            let corpus = synth_generate(&s)?;
            fs::create_dir_all(&out).map_err(|e| PipelineError::io(&out, e))?;
            write_jsonl(&out.join("records.jsonl"), &corpus.records)?;
            write_json(&out.join("bayes.json"), &corpus.bayes)?;
            println!("{} synthetic records -> {}", corpus.records.len(), out.display());
        }
        Command::Report {
            records,
            out,
            methods,
            seed,
            show,
        } => match (records, show) {
            (Some(path), _) => {
                let records = load_records(&path)?;
                let methods = methods.unwrap_or_else(|| available_methods(&records));
                let (report, scores) = analyse(&records, &methods, &AnalysisToggles::default(), seed)?;
                let dir = out.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
                let path = write_outputs(&dir, &report, &records, &scores)?;
                println!("report -> {}", path.display());
            }
            (None, Some(path)) => {
                let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
                let report: EvaluationReport = serde_json::from_str(&text)?;
                print!("{}", summarize(&report));
            }
            (None, None) => return Err(PipelineError::Config("report needs --records or --show".into())),
        },
    }
    Ok(())
}

/// Plain-text AUROC / ECE table per benchmark.
fn summarize(report: &EvaluationReport) -> String {
    let mut s = format!("schema {}  seed {}\n", report.schema_version, report.seed);
    for section in report.benchmarks.iter().chain(std::iter::once(&report.pooled)) {
        s += &format!(
            "\n{} (n={}, accuracy {:.3}, disagreement {:.3})\n  method  AUROC   ECE     Brier   AUPRC\n",
            section.name, section.n, section.accuracy, section.disagreement_rate
        );
        for (m, r) in &section.metrics {
            s += &format!("  {:<6}  {:.4}  {:.4}  {:.4}  {:.4}\n", m.as_str(), r.auroc, r.ece, r.brier, r.auprc);
        }
        for (m, why) in &section.skipped {
            s += &format!("  {:<6}  skipped: {why}\n", m.as_str());
        }
    }
    for note in &report.notes {
        s += &format!("note: {note}\n");
    }
    s
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
