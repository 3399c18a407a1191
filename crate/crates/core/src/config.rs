//! Run configuration: one JSON document with sections `generator`, `oracle`,
//! `prover`, `search`, `star` and `eval`. Missing keys take defaults,
//! unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{AnnotateOptions, AnnotationTemplate, FixtureOracle, HttpOracle, OracleClient, RetryPolicy};
use crate::generator::{
    CountPolicy, Decode, Generator, GreedyToyGenerator, HttpGenerator, HttpGeneratorConfig, Mode, ScriptEntry, ScriptedGenerator,
    ToySolverGenerator,
};
use crate::model::{read_dataset, Provenance, SearchBudget};
use crate::prover::{BridgeFactory, EnvFactory, RuleSet, SessionPool, ToyFactory};
use crate::search::{Clock, Priority, SearchConfig};
use crate::star::DatasetMode;

pub const ENV_GENERATOR_URL: &str = "PROOFSTAR_GENERATOR_URL";
pub const ENV_ORACLE_URL: &str = "PROOFSTAR_ORACLE_URL";
pub const ENV_ORACLE_API_KEY: &str = "PROOFSTAR_ORACLE_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Unreadable { path: PathBuf, source: std::io::Error },
    #[error("config schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot build {component}: {message}")]
    Build { component: &'static str, message: String },
}

fn build_err(component: &'static str) -> impl Fn(String) -> ConfigError {
    move |message| ConfigError::Build { component, message }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Http,
    Scripted,
    /// Count policy fitted on `dataset`.
    Count,
    ToySolver,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub kind: GeneratorKind,
    pub http: HttpGeneratorConfig,
    pub script: Vec<ScriptEntry>,
    pub states: BTreeMap<String, Vec<ScriptEntry>>,
    pub dataset: Option<PathBuf>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub url: Option<String>,
    pub api_key: Option<String>,
    /// JSONL of recorded `{state, tactic, response}` replies.
    pub fixture: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub timeout_ms: u64,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub temperature: f64,
    pub system_prompt: Option<String>,
    pub failure_ceiling: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        let opts = AnnotateOptions::default();
        Self {
            url: None,
            api_key: None,
            fixture: None,
            template: None,
            timeout_ms: 120_000,
            concurrency: opts.concurrency,
            retry: opts.retry,
            temperature: opts.temperature,
            system_prompt: None,
            failure_ceiling: opts.failure_ceiling,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProverKind {
    #[default]
    Toy,
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProverSection {
    pub kind: ProverKind,
    /// Rule file for the toy prover and the toy generators.
    pub rules: Option<PathBuf>,
    pub program: Option<String>,
    pub args: Vec<String>,
    pub pool_size: usize,
    pub tactic_timeout_ms: u64,
}

impl Default for ProverSection {
    fn default() -> Self {
        Self {
            kind: ProverKind::Toy,
            rules: None,
            program: None,
            args: Vec::new(),
            pool_size: 8,
            tactic_timeout_ms: 10_000,
        }
    }
}

/// Execution knobs shared by every search, plus the best-first budget used
/// by the `search` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "S")]
    pub s: u32,
    #[serde(rename = "T")]
    pub t: f64,
    pub timeout_ms: u64,
    pub max_proofs: u32,
    pub mode: Mode,
    pub decode: Decode,
    pub priority: Priority,
    pub clock: Clock,
    pub workers: usize,
    pub attempt_batch: u32,
    pub dedup_states: bool,
    pub max_tokens: u32,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            n: 50,
            k: 1,
            s: 8,
            t: 0.7,
            timeout_ms: 0,
            max_proofs: 3,
            mode: Mode::Direct,
            decode: Decode::Sample,
            priority: Priority::Standard,
            clock: Clock::Wall,
            workers: 4,
            attempt_batch: 32,
            dedup_states: false,
            max_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    /// Refit the in-repo count policy (toy runs).
    #[default]
    Count,
    /// Run `trainer_command` through `sh -c`.
    Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StarSection {
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "T")]
    pub t: f64,
    pub timeout_ms: u64,
    pub max_proofs: u32,
    pub iterations: u32,
    pub dataset_mode: DatasetMode,
    pub trainer: TrainerKind,
    pub trainer_command: Option<String>,
    /// Annotated dataset joined into every round in joint mode.
    pub d_t: Option<PathBuf>,
    pub failure_ceiling: f64,
}

impl Default for StarSection {
    fn default() -> Self {
        Self {
            n: 5,
            k: 32,
            t: 1.0,
            timeout_ms: 60_000,
            max_proofs: 3,
            iterations: 2,
            dataset_mode: DatasetMode::Joint,
            trainer: TrainerKind::Count,
            trainer_command: None,
            d_t: None,
            failure_ceiling: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "S")]
    pub s: u32,
    #[serde(rename = "T")]
    pub t: f64,
    pub timeout_ms: u64,
    pub approach: String,
    /// Prefix sizes reported in the scaling curve; empty skips the curve.
    pub scaling_ks: Vec<u32>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n: 50,
            k: 32,
            s: 1,
            t: 0.7,
            timeout_ms: 0,
            approach: "proofstar".into(),
            scaling_ks: vec![1, 2, 4, 8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub generator: GeneratorSection,
    pub oracle: OracleSection,
    pub prover: ProverSection,
    pub search: SearchSection,
    pub star: StarSection,
    pub eval: EvalSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let text = if text.trim().is_empty() { "{}" } else { text };
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::SchemaViolation {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: crate::model::ModelError| ConfigError::Invalid(e.to_string());
        self.eval_budget().validate(false).map_err(invalid)?;
        self.star_budget().validate(true).map_err(invalid)?;
        self.search_budget().validate(false).map_err(invalid)?;
        if self.star.trainer == TrainerKind::Command && self.star.trainer_command.is_none() {
            return Err(ConfigError::Invalid("star.trainer is command but star.trainer_command is unset".into()));
        }
        Ok(())
    }

    /// Overrides endpoint URLs and credentials from the environment.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(url) = var(ENV_GENERATOR_URL) {
            self.generator.http.url = url;
        }
        if let Some(url) = var(ENV_ORACLE_URL) {
            self.oracle.url = Some(url);
        }
        if let Some(key) = var(ENV_ORACLE_API_KEY) {
            self.oracle.api_key = Some(key);
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn eval_budget(&self) -> SearchBudget {
        SearchBudget {
            n: self.eval.n,
            k: self.eval.k,
            s: self.eval.s,
            temperature: self.eval.t,
            per_problem_timeout_ms: self.eval.timeout_ms,
            max_proofs_per_problem: 1,
        }
    }

    pub fn star_budget(&self) -> SearchBudget {
        SearchBudget {
            n: self.star.n,
            k: self.star.k,
            s: 1,
            temperature: self.star.t,
            per_problem_timeout_ms: self.star.timeout_ms,
            max_proofs_per_problem: self.star.max_proofs,
        }
    }

    pub fn search_budget(&self) -> SearchBudget {
        SearchBudget {
            n: self.search.n,
            k: self.search.k,
            s: self.search.s,
            temperature: self.search.t,
            per_problem_timeout_ms: self.search.timeout_ms,
            max_proofs_per_problem: self.search.max_proofs,
        }
    }

    /// Search settings around `budget` with the shared execution knobs.
    pub fn search_config(&self, budget: SearchBudget, seed: u64) -> SearchConfig {
        SearchConfig {
            budget,
            mode: self.search.mode,
            decode: self.search.decode,
            max_tokens: self.search.max_tokens,
            priority: self.search.priority,
            clock: self.search.clock,
            tactic_timeout_ms: self.prover.tactic_timeout_ms,
            workers: self.search.workers.max(1),
            attempt_batch: self.search.attempt_batch,
            dedup_states: self.search.dedup_states,
            seed,
        }
    }

    pub fn rules(&self) -> Result<Option<Arc<RuleSet>>, ConfigError> {
        match &self.prover.rules {
            None => Ok(None),
            Some(p) => RuleSet::load(&self.resolve(p))
                .map(|r| Some(Arc::new(r)))
                .map_err(|e| build_err("rules")(e.to_string())),
        }
    }

    fn require_rules(&self, component: &'static str) -> Result<Arc<RuleSet>, ConfigError> {
        self.rules()?
            .ok_or_else(|| build_err(component)("prover.rules is required".into()))
    }

    pub fn build_env(&self) -> Result<Arc<dyn EnvFactory>, ConfigError> {
        match self.prover.kind {
            ProverKind::Toy => {
                let rules = self.require_rules("toy prover")?;
                Ok(Arc::new(ToyFactory::new((*rules).clone())))
            }
            ProverKind::Bridge => {
                let program = self
                    .prover
                    .program
                    .clone()
                    .ok_or_else(|| build_err("bridge")("prover.program is required".into()))?;
                let factory = BridgeFactory::new(program, self.prover.args.clone());
                Ok(Arc::new(SessionPool::new(Box::new(factory), self.prover.pool_size.max(1))))
            }
        }
    }

    pub fn build_generator(&self) -> Result<Arc<dyn Generator>, ConfigError> {
        let g = &self.generator;
        let err = build_err("generator");
        Ok(match g.kind {
            GeneratorKind::Http => Arc::new(HttpGenerator::new(g.http.clone()).map_err(|e| err(e.to_string()))?),
            GeneratorKind::Scripted => {
                let mut s = ScriptedGenerator::new(g.script.clone()).map_err(|e| err(e.to_string()))?;
                for (state, entries) in &g.states {
                    s = s.with_state(state.clone(), entries.clone()).map_err(|e| err(e.to_string()))?;
                }
                Arc::new(s)
            }
            GeneratorKind::Count => {
                let path = g.dataset.as_ref().ok_or_else(|| err("generator.dataset is required".into()))?;
                let data = read_dataset(&self.resolve(path), Provenance::Sft).map_err(|e| err(e.to_string()))?;
                Arc::new(CountPolicy::fit(&data, self.require_rules("generator")?).map_err(|e| err(e.to_string()))?)
            }
            GeneratorKind::ToySolver => Arc::new(ToySolverGenerator::new(self.require_rules("generator")?)),
            GeneratorKind::Greedy => {
                let rules = self.require_rules("generator")?;
                let weights = if g.weights.is_empty() {
                    vec![1.0; rules.rules().len()]
                } else {
                    g.weights.clone()
                };
                Arc::new(GreedyToyGenerator::new(rules, weights).map_err(|e| err(e.to_string()))?)
            }
        })
    }

    pub fn annotate_options(&self) -> Result<AnnotateOptions, ConfigError> {
        let o = &self.oracle;
        let template = match &o.template {
            Some(p) => AnnotationTemplate::load(&self.resolve(p)).map_err(|e| build_err("template")(e.to_string()))?,
            None => AnnotationTemplate::builtin(),
        };
        Ok(AnnotateOptions {
            concurrency: o.concurrency.max(1),
            retry: o.retry,
            temperature: o.temperature,
            system_prompt: o.system_prompt.clone(),
            failure_ceiling: o.failure_ceiling,
            template,
        })
    }

    pub fn build_oracle(&self, template: &AnnotationTemplate) -> Result<Box<dyn OracleClient>, ConfigError> {
        let err = build_err("oracle");
        match (&self.oracle.fixture, &self.oracle.url) {
            (Some(f), _) => Ok(Box::new(
                FixtureOracle::load(&self.resolve(f), template).map_err(|e| err(e.to_string()))?,
            )),
            (None, Some(url)) => Ok(Box::new(
                HttpOracle::new(url.clone(), self.oracle.api_key.clone(), Duration::from_millis(self.oracle.timeout_ms))
                    .map_err(|e| err(e.to_string()))?,
            )),
            (None, None) => Err(err("set oracle.url or oracle.fixture".into())),
        }
    }
}

/// Reads and validates a config file; relative paths inside it resolve
/// against the file's directory.
pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = Config::from_json(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = Config::from_json("{}").unwrap();
        assert_eq!(cfg.star.max_proofs, 3);
        assert_eq!((cfg.star.n, cfg.star.k, cfg.star.t, cfg.star.timeout_ms), (5, 32, 1.0, 60_000));
        assert_eq!((cfg.eval.n, cfg.eval.k, cfg.eval.s, cfg.eval.t), (50, 32, 1, 0.7));
        assert_eq!(Config::from_json("").unwrap(), cfg);
    }

    #[test]
    fn schema_violation_carries_path() {
        match Config::from_json(r#"{"star": {"K": "many"}}"#) {
            Err(ConfigError::SchemaViolation { path, .. }) => assert_eq!(path, "star.K"),
            other => panic!("{other:?}"),
        }
        match Config::from_json(r#"{"eval": {"budget": 3}}"#) {
            Err(ConfigError::SchemaViolation { message, .. }) => assert!(message.contains("budget"), "{message}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Config::from_json(r#"{"extra": {}}"#),
            Err(ConfigError::SchemaViolation { .. })
        ));
    }

    #[test]
    fn partial_section_keeps_other_defaults() {
        let cfg = Config::from_json(r#"{"eval": {"K": 64}, "search": {"clock": {"kind": "logical", "ms_per_call": 5}}}"#).unwrap();
        assert_eq!((cfg.eval.k, cfg.eval.n), (64, 50));
        assert_eq!(cfg.search.clock, Clock::Logical { ms_per_call: 5 });
    }

    #[test]
    fn invalid_budget_rejected() {
        assert!(matches!(Config::from_json(r#"{"eval": {"N": 0}}"#), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn round_trip_is_fixed_point() {
        let text = r#"{"generator": {"kind": "greedy", "weights": [1, 2]}, "star": {"dataset_mode": "continue"}, "prover": {"rules": "r.txt"}}"#;
        let a = Config::from_json(text).unwrap();
        let b = Config::from_json(&a.to_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn env_overrides_only_endpoints() {
        let mut cfg = Config::default();
        cfg.apply_env(|k| match k {
            ENV_ORACLE_URL => Some("http://oracle".into()),
            ENV_ORACLE_API_KEY => Some("secret".into()),
            ENV_GENERATOR_URL => Some("http://gen".into()),
            _ => None,
        });
        assert_eq!(cfg.oracle.url.as_deref(), Some("http://oracle"));
        assert_eq!(cfg.generator.http.url, "http://gen");
        assert_eq!(cfg.eval, EvalSection::default());
    }

    #[test]
    fn missing_file_is_unreadable() {
        assert!(matches!(
            load_config(Path::new("/nonexistent/cfg.json")),
            Err(ConfigError::Unreadable { .. })
        ));
    }
}
