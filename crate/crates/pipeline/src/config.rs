//! Run configuration, read from one TOML file. Relative paths resolve
//! against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use quorum_core::baselines::MethodId;
use quorum_core::model::Benchmark;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::RetryPolicy;
use crate::error::{PipelineError, Result};
use crate::ingest::DEFAULT_MMLU_SUBJECTS;
use crate::prompts::{default_roles, PromptSet, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSource {
    pub kind: Benchmark,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// One of the built-in role names, or any name when `system_prompt` is set.
    pub role: String,
    /// Falls back to the team model.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub system_prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Inline key; prefer `api_key_env`. Never hashed or written out.
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> u64 {
    120
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000".into(),
            api_key: None,
            api_key_env: default_key_env(),
            timeout_secs: default_timeout(),
        }
    }
}

impl EndpointConfig {
    pub fn resolve_key(&self) -> Option<String> {
        self.api_key.clone().or_else(|| std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeamConfig {
    /// Model for agents without their own, and for the analysis and aggregator calls.
    pub model: String,
    /// Empty means the five built-in roles, all on `model`.
    pub agents: Vec<AgentConfig>,
    pub agent_temperature: f64,
    pub agent_max_tokens: u32,
    pub analysis_model: Option<String>,
    pub analysis_temperature: f64,
    pub analysis_max_tokens: u32,
    pub verbalized_max_tokens: u32,
    pub aggregator_max_tokens: u32,
    pub endpoint: EndpointConfig,
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for TeamConfig {
    fn default() -> Self {
        TeamConfig {
            model: "default".into(),
            agents: Vec::new(),
            agent_temperature: 0.7,
            agent_max_tokens: 800,
            analysis_model: None,
            analysis_temperature: 0.0,
            analysis_max_tokens: 400,
            verbalized_max_tokens: 20,
            aggregator_max_tokens: 100,
            endpoint: EndpointConfig::default(),
            concurrency: 8,
            retry: RetryPolicy::default(),
        }
    }
}

/// An agent with its prompt and model resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedAgent {
    pub role: Role,
    pub model_id: String,
}

impl TeamConfig {
    pub fn resolve_agents(&self) -> Result<Vec<ResolvedAgent>> {
        let builtin = default_roles();
        let agents: Vec<ResolvedAgent> = if self.agents.is_empty() {
            builtin
                .into_iter()
                .map(|role| ResolvedAgent {
                    role,
                    model_id: self.model.clone(),
                })
                .collect()
        } else {
            self.agents
                .iter()
                .map(|a| {
                    let system_prompt = match &a.system_prompt {
                        Some(p) => p.clone(),
                        None => builtin
                            .iter()
                            .find(|r| r.name.eq_ignore_ascii_case(a.role.trim()))
                            .map(|r| r.system_prompt.clone())
                            .ok_or_else(|| {
                                PipelineError::Config(format!("role `{}` is not built in and has no system_prompt", a.role))
                            })?,
                    };
                    Ok(ResolvedAgent {
                        role: Role {
                            name: a.role.clone(),
                            system_prompt,
                        },
                        model_id: a.model.clone().unwrap_or_else(|| self.model.clone()),
                    })
                })
                .collect::<Result<_>>()?
        };
        if agents.len() < 2 {
            return Err(PipelineError::Config(format!("a team needs at least 2 agents, got {}", agents.len())));
        }
        Ok(agents)
    }

    pub fn analysis_model(&self) -> &str {
        self.analysis_model.as_deref().unwrap_or(&self.model)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve_agents()?;
        if self.concurrency == 0 {
            return Err(PipelineError::Config("concurrency must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(PipelineError::Config("retry.max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub model: String,
    pub dim: Option<usize>,
    /// Defaults to the team endpoint.
    pub endpoint: Option<EndpointConfig>,
    pub batch_size: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            model: "bge-large-en-v1.5".into(),
            dim: Some(1024),
            endpoint: None,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisToggles {
    pub tiers: bool,
    pub cross_benchmark: bool,
    pub ablation: bool,
    pub cost: bool,
    pub feature_importance: bool,
    pub bootstrap_resamples: usize,
    pub agent_counts: Vec<usize>,
}

impl Default for AnalysisToggles {
    fn default() -> Self {
        AnalysisToggles {
            tiers: true,
            cross_benchmark: true,
            ablation: true,
            cost: true,
            feature_importance: true,
            bootstrap_resamples: 1000,
            agent_counts: vec![3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub mmlu_subjects: Vec<String>,
    /// Keep only the first n questions of each benchmark.
    pub limit: Option<usize>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            mmlu_subjects: DEFAULT_MMLU_SUBJECTS.iter().map(|s| s.to_string()).collect(),
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmarks: Vec<BenchmarkSource>,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub team: TeamConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default = "all_methods")]
    pub methods: Vec<MethodId>,
    #[serde(default)]
    pub analyses: AnalysisToggles,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/store`.
    #[serde(default)]
    pub store_dir: Option<PathBuf>,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Run against the built-in simulator configured from this directory.
    #[serde(default)]
    pub mock_dir: Option<PathBuf>,
    /// Replacement prompt templates.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
}

fn all_methods() -> Vec<MethodId> {
    MethodId::ALL.to_vec()
}

fn default_seed() -> u64 {
    42
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// The parts of a run that determine its results; paths to outputs and
/// credentials are left out.
#[derive(Serialize)]
struct HashedConfig<'a> {
    benchmarks: Vec<(Benchmark, String)>,
    ingest: &'a IngestConfig,
    team: &'a TeamConfig,
    agents: Vec<ResolvedAgent>,
    embedding: (&'a str, Option<usize>),
    methods: &'a [MethodId],
    analyses: &'a AnalysisToggles,
    seed: u64,
    prompts: &'a PromptSet,
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for b in &mut self.benchmarks {
            fix(&mut b.path);
        }
        fix(&mut self.output_dir);
        for p in [&mut self.store_dir, &mut self.cache_dir, &mut self.mock_dir, &mut self.prompts_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.benchmarks.is_empty() {
            return Err(PipelineError::Config("no benchmarks configured".into()));
        }
        if self.methods.is_empty() {
            return Err(PipelineError::Config("no methods configured".into()));
        }
        self.team.validate()
    }

    pub fn store_dir(&self) -> PathBuf {
        self.store_dir.clone().unwrap_or_else(|| self.output_dir.join("store"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn prompts(&self) -> Result<PromptSet> {
        match &self.prompts_dir {
            Some(dir) => PromptSet::from_dir(dir),
            None => Ok(PromptSet::default()),
        }
    }

    /// SHA-256 over everything that shapes the results. Benchmark paths
    /// enter by file name only, so moving a checkout keeps the hash.
    pub fn config_hash(&self) -> Result<String> {
        let prompts = self.prompts()?;
        let hashed = HashedConfig {
            benchmarks: self
                .benchmarks
                .iter()
                .map(|b| {
                    let name = b.path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
                    (b.kind, name)
                })
                .collect(),
            ingest: &self.ingest,
            team: &self.team,
            agents: self.team.resolve_agents()?,
            embedding: (&self.embedding.model, self.embedding.dim),
            methods: &self.methods,
            analyses: &self.analyses,
            seed: self.seed,
            prompts: &prompts,
        };
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&hashed)?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
benchmarks = [{ kind = "strategyqa", path = "data/sqa.jsonl" }]
"#;

    #[test]
    fn defaults_follow_the_method_settings() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(cfg.team.agent_temperature, 0.7);
        assert_eq!(cfg.team.agent_max_tokens, 800);
        assert_eq!(cfg.team.analysis_temperature, 0.0);
        assert_eq!(cfg.team.aggregator_max_tokens, 100);
        assert_eq!(cfg.team.concurrency, 8);
        assert_eq!(cfg.team.retry, RetryPolicy::default());
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.methods.len(), 9);
        assert_eq!(cfg.benchmarks[0].path, PathBuf::from("/base/data/sqa.jsonl"));
        assert_eq!(cfg.store_dir(), PathBuf::from("/base/out/store"));
        let agents = cfg.team.resolve_agents().unwrap();
        assert_eq!(agents.len(), 5);
        assert_eq!(agents[1].role.name, "Devil's Advocate");
    }

    #[test]
    fn heterogeneous_team() {
        let text = r#"
benchmarks = [{ kind = "mmlu", path = "m.jsonl" }]
[team]
model = "model-a"
agents = [
  { role = "Analytical Reasoner" },
  { role = "Devil's Advocate", model = "model-b" },
  { role = "Knowledge-Focused" },
  { role = "Intuitive Responder", model = "model-b" },
  { role = "Systematic Verifier" },
]
"#;
        let cfg = RunConfig::from_toml(text, Path::new(".")).unwrap();
        let models: Vec<String> = cfg.team.resolve_agents().unwrap().into_iter().map(|a| a.model_id).collect();
        assert_eq!(models, ["model-a", "model-b", "model-a", "model-b", "model-a"]);
    }

    #[test]
    fn unknown_role_needs_a_prompt() {
        let text = r#"
benchmarks = [{ kind = "mmlu", path = "m.jsonl" }]
[team]
agents = [{ role = "Poet" }, { role = "Devil's Advocate" }]
"#;
        assert!(RunConfig::from_toml(text, Path::new(".")).is_err());
    }

    #[test]
    fn hash_ignores_locations_and_keys_but_not_settings() {
        let a = RunConfig::from_toml(MINIMAL, Path::new("/x")).unwrap();
        let mut b = RunConfig::from_toml(MINIMAL, Path::new("/y")).unwrap();
        b.output_dir = PathBuf::from("/elsewhere");
        b.team.endpoint.api_key = Some("secret".into());
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        b.team.agent_temperature = 0.5;
        assert_ne!(a.config_hash().unwrap(), b.config_hash().unwrap());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_toml("benchmarks = []\ntypo = 1\n", Path::new(".")).is_err());
    }

    #[test]
    fn documented_example_parses() {
        let text = include_str!("../../../docs/example-config.toml");
        let cfg = RunConfig::from_toml(text, Path::new("/docs")).unwrap();
        assert_eq!(cfg.benchmarks.len(), 4);
        assert_eq!(cfg.team.resolve_agents().unwrap()[3].model_id, "other-model");
        assert_eq!(cfg.analyses, AnalysisToggles::default());
        assert_eq!(cfg.embedding.dim, Some(1024));
    }
}
