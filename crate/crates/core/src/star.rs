//! Expert iteration: sample proofs with the current policy, keep verified
//! successes, deduplicate their steps into a dataset, train, repeat.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{CountPolicy, GenError, Generator};
use crate::model::{write_dataset, write_trajectories, ModelError, Provenance, SearchBudget, Theorem, TrainingExample, Trajectory};
use crate::prover::{EnvFactory, RuleSet};
use crate::search::{search_all, Method, SearchConfig, SearchError};
use crate::util::{derive_seed, sha256_hex};

#[derive(Debug, Error)]
pub enum StarError {
    #[error("problem set is empty")]
    EmptyProblemSet,
    #[error("joint mode needs the annotated dataset")]
    MissingDT,
    #[error("{failed} of {total} problems failed outright, above the ceiling")]
    RunFailed { failed: usize, total: usize },
    #[error("trainer failed in iteration {iteration}: {message}")]
    TrainerFailed {
        iteration: u32,
        message: String,
        /// Reports of the iterations that finished before the failure.
        completed: Vec<IterationReport>,
    },
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    /// Train from the base policy on the annotated set plus this round's data.
    #[default]
    Joint,
    /// Train the previous round's policy on this round's data only.
    Continue,
}

/// Collection budget defaults: K=32, T=1.0, N=5, 60 s per problem, at most
/// 3 proofs per problem.
pub fn default_star_budget() -> SearchBudget {
    SearchBudget {
        n: 5,
        k: 32,
        s: 1,
        temperature: 1.0,
        per_problem_timeout_ms: 60_000,
        max_proofs_per_problem: 3,
    }
}

#[derive(Debug, Clone)]
pub struct IterationConfig {
    pub iteration_index: u32,
    pub search: SearchConfig,
    pub dataset_mode: DatasetMode,
    pub problems: Vec<Theorem>,
    /// Largest tolerated fraction of problems whose every attempt faulted.
    pub failure_ceiling: f64,
}

impl IterationConfig {
    pub fn new(problems: Vec<Theorem>, mut search: SearchConfig) -> Self {
        search.budget = default_star_budget();
        Self {
            iteration_index: 1,
            search,
            dataset_mode: DatasetMode::Joint,
            problems,
            failure_ceiling: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub problems_attempted: usize,
    pub problems_solved: usize,
    pub pairs_collected: usize,
    pub pairs_after_dedup: usize,
    /// Empirical expected reward of the collecting policy.
    pub success_rate: f64,
    pub dataset_path: Option<PathBuf>,
    pub dataset_lines: usize,
    /// Pass rate of the newly trained policy, when an evaluator was supplied.
    pub eval_after_training: Option<f64>,
}

/// Samples every problem with `gen` and keeps verified proofs, at most the
/// budget's per-problem cap each, in attempt order.
pub fn collect_iteration(
    cfg: &IterationConfig,
    env: &dyn EnvFactory,
    gen: &dyn Generator,
) -> Result<(Vec<Trajectory>, IterationReport), StarError> {
    if cfg.problems.is_empty() {
        return Err(StarError::EmptyProblemSet);
    }
    let results = search_all(Method::Sampling, &cfg.problems, env, gen, &cfg.search)?;
    let failed = results
        .iter()
        .filter(|r| !r.attempts.is_empty() && r.errors.len() >= r.attempts.len())
        .count();
    if failed as f64 > cfg.failure_ceiling * results.len() as f64 {
        return Err(StarError::RunFailed {
            failed,
            total: results.len(),
        });
    }
    for r in results.iter().filter(|r| !r.errors.is_empty()) {
        log::warn!("{}: {} attempt errors, first: {}", r.theorem_id, r.errors.len(), r.errors[0]);
    }
    let solved = results.iter().filter(|r| r.solved).count();
    let proofs: Vec<Trajectory> = results.into_iter().flat_map(|r| r.proofs).collect();
    let pairs_collected = proofs.iter().map(|t| t.steps.len()).sum();
    let pairs_after_dedup = dedup_pairs(&proofs, cfg.iteration_index).len();
    let report = IterationReport {
        iteration: cfg.iteration_index,
        problems_attempted: cfg.problems.len(),
        problems_solved: solved,
        pairs_collected,
        pairs_after_dedup,
        success_rate: solved as f64 / cfg.problems.len() as f64,
        dataset_path: None,
        dataset_lines: 0,
        eval_after_training: None,
    };
    Ok((proofs, report))
}

/// Flattens trajectories into training triples, keeping the first
/// occurrence of each exact (state, thought, tactic).
pub fn dedup_pairs(trajectories: &[Trajectory], iteration: u32) -> Vec<TrainingExample> {
    let examples = trajectories.iter().flat_map(|t| {
        t.steps.iter().map(|s| TrainingExample {
            state_text: s.state.goals_text.clone(),
            thought_text: s.thought.as_ref().map(|t| t.as_str().to_string()),
            tactic_text: s.tactic.as_str().to_string(),
            provenance: Provenance::StarIter(iteration),
        })
    });
    dedup_examples(examples)
}

fn dedup_examples(examples: impl IntoIterator<Item = TrainingExample>) -> Vec<TrainingExample> {
    let mut seen = HashSet::new();
    examples
        .into_iter()
        .filter(|e| seen.insert((e.state_text.clone(), e.thought_text.clone(), e.tactic_text.clone())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub name: String,
    pub count: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mode: DatasetMode,
    pub count: usize,
    pub sha256: String,
    pub sources: Vec<DatasetSource>,
}

#[derive(Debug, Clone)]
pub struct AssembledDataset {
    pub path: PathBuf,
    pub manifest_path: PathBuf,
    pub examples: Vec<TrainingExample>,
    pub manifest: DatasetManifest,
}

fn dataset_bytes(examples: &[TrainingExample]) -> Result<Vec<u8>, ModelError> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, examples)?;
    Ok(buf)
}

/// Joint: the annotated set followed by the round's examples not already in
/// it. Continue: the round's examples alone. Writes `<stem>.jsonl` and
/// `<stem>.manifest.json` under `out_dir`.
pub fn assemble_dataset(
    mode: DatasetMode,
    d_t: Option<&[TrainingExample]>,
    d_i: &[TrainingExample],
    out_dir: &Path,
    stem: &str,
) -> Result<AssembledDataset, StarError> {
    let mut sources = Vec::new();
    let examples = match mode {
        DatasetMode::Joint => {
            let d_t = d_t.ok_or(StarError::MissingDT)?;
            sources.push(DatasetSource {
                name: "d_t".into(),
                count: d_t.len(),
                sha256: sha256_hex(&dataset_bytes(d_t)?),
            });
            let known: HashSet<_> = d_t.iter().map(TrainingExample::triple).collect();
            let fresh: Vec<TrainingExample> = dedup_examples(d_i.iter().filter(|e| !known.contains(&e.triple())).cloned());
            d_t.iter().cloned().chain(fresh).collect::<Vec<_>>()
        }
        DatasetMode::Continue => dedup_examples(d_i.iter().cloned()),
    };
    sources.push(DatasetSource {
        name: "d_i".into(),
        count: d_i.len(),
        sha256: sha256_hex(&dataset_bytes(d_i)?),
    });

    std::fs::create_dir_all(out_dir)?;
    let bytes = dataset_bytes(&examples)?;
    let path = out_dir.join(format!("{stem}.jsonl"));
    std::fs::write(&path, &bytes)?;
    let manifest = DatasetManifest {
        mode,
        count: examples.len(),
        sha256: sha256_hex(&bytes),
        sources,
    };
    let manifest_path = out_dir.join(format!("{stem}.manifest.json"));
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(AssembledDataset {
        path,
        manifest_path,
        examples,
        manifest,
    })
}

pub struct TrainContext<'a> {
    pub iteration: u32,
    pub mode: DatasetMode,
    pub dataset: &'a AssembledDataset,
    pub out_dir: &'a Path,
}

/// Produces the policy for the next round.
pub trait Trainer {
    fn train(&mut self, ctx: &TrainContext<'_>, current: Arc<dyn Generator>) -> Result<Arc<dyn Generator>, String>;
}

/// Runs a shell command with `{dataset}`, `{out_dir}` and `{iteration}`
/// substituted. The serving endpoint behind the current generator is
/// expected to reflect the new weights when the command exits 0.
pub struct CommandTrainer {
    pub template: String,
}

impl CommandTrainer {
    pub fn command_line(&self, ctx: &TrainContext<'_>) -> String {
        self.template
            .replace("{dataset}", &ctx.dataset.path.display().to_string())
            .replace("{out_dir}", &ctx.out_dir.display().to_string())
            .replace("{iteration}", &ctx.iteration.to_string())
    }
}

impl Trainer for CommandTrainer {
    fn train(&mut self, ctx: &TrainContext<'_>, current: Arc<dyn Generator>) -> Result<Arc<dyn Generator>, String> {
        let line = self.command_line(ctx);
        log::info!("trainer: {line}");
        let status = Command::new("sh").arg("-c").arg(&line).status().map_err(|e| format!("{line}: {e}"))?;
        if !status.success() {
            return Err(format!("{line}: exited with {status}"));
        }
        Ok(current)
    }
}

/// Refits the in-repo count policy: from scratch on the assembled dataset in
/// joint mode, on top of the previous policy's counts in continue mode.
pub struct CountPolicyTrainer {
    rules: Arc<RuleSet>,
    previous: Option<CountPolicy>,
}

impl CountPolicyTrainer {
    pub fn new(rules: Arc<RuleSet>, initial: Option<CountPolicy>) -> Self {
        Self { rules, previous: initial }
    }
}

impl Trainer for CountPolicyTrainer {
    fn train(&mut self, ctx: &TrainContext<'_>, _current: Arc<dyn Generator>) -> Result<Arc<dyn Generator>, String> {
        let policy = match (ctx.mode, self.previous.take()) {
            (DatasetMode::Continue, Some(mut p)) => {
                p.absorb(&ctx.dataset.examples);
                p
            }
            _ => CountPolicy::fit(&ctx.dataset.examples, self.rules.clone()).map_err(|e: GenError| e.to_string())?,
        };
        self.previous = Some(policy.clone());
        Ok(Arc::new(policy))
    }
}

#[derive(Debug, Clone, Serialize)]
struct IterationManifest<'a> {
    iteration: u32,
    seed: u64,
    budget: SearchBudget,
    dataset_mode: DatasetMode,
    generator: String,
    report: &'a IterationReport,
    trajectories: String,
    trajectories_sha256: String,
    dataset: String,
    dataset_sha256: String,
}

pub type Evaluator<'a> = dyn Fn(&dyn Generator) -> Result<f64, StarError> + 'a;

/// Alternates collect, assemble, train for `n_iters` rounds. Artifacts for
/// round `i` land in `out_dir/iter_<i>/`.
pub fn run_iterations(
    n_iters: u32,
    template: &IterationConfig,
    env: &dyn EnvFactory,
    initial: Arc<dyn Generator>,
    trainer: &mut dyn Trainer,
    d_t: Option<&[TrainingExample]>,
    out_dir: &Path,
    evaluate: Option<&Evaluator<'_>>,
) -> Result<Vec<IterationReport>, StarError> {
    if template.dataset_mode == DatasetMode::Joint && d_t.is_none() {
        return Err(StarError::MissingDT);
    }
    let mut reports = Vec::new();
    let mut policy = initial;
    for i in 1..=n_iters {
        let mut cfg = template.clone();
        cfg.iteration_index = i;
        cfg.search.seed = derive_seed(template.search.seed, "star-iteration", u64::from(i));
        let iter_dir = out_dir.join(format!("iter_{i}"));
        std::fs::create_dir_all(&iter_dir)?;

        let (proofs, mut report) = collect_iteration(&cfg, env, policy.as_ref())?;
        let traj_path = iter_dir.join("trajectories.jsonl");
        write_trajectories(BufWriter::new(File::create(&traj_path)?), &proofs)?;
        let d_i = dedup_pairs(&proofs, i);
        let dataset = assemble_dataset(cfg.dataset_mode, d_t, &d_i, &iter_dir, "dataset")?;
        report.dataset_path = Some(dataset.path.clone());
        report.dataset_lines = dataset.manifest.count;

        let ctx = TrainContext {
            iteration: i,
            mode: cfg.dataset_mode,
            dataset: &dataset,
            out_dir: &iter_dir,
        };
        let generator_before = policy.describe();
        policy = match trainer.train(&ctx, policy.clone()) {
            Ok(p) => p,
            Err(message) => {
                return Err(StarError::TrainerFailed {
                    iteration: i,
                    message,
                    completed: reports,
                })
            }
        };
        if let Some(eval) = evaluate {
            report.eval_after_training = Some(eval(policy.as_ref())?);
        }

        let manifest = IterationManifest {
            iteration: i,
            seed: cfg.search.seed,
            budget: cfg.search.budget,
            dataset_mode: cfg.dataset_mode,
            generator: generator_before,
            report: &report,
            trajectories: "trajectories.jsonl".into(),
            trajectories_sha256: sha256_hex(&std::fs::read(&traj_path)?),
            dataset: "dataset.jsonl".into(),
            dataset_sha256: dataset.manifest.sha256.clone(),
        };
        std::fs::write(
            iter_dir.join("iteration.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        log::info!(
            "iteration {i}: solved {}/{} ({:.3}), {} pairs after dedup",
            report.problems_solved,
            report.problems_attempted,
            report.success_rate,
            report.pairs_after_dedup
        );
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::ScriptedGenerator;
    use crate::model::{ProofState, ProofStep, Tactic, Thought};
    use crate::prover::ToyFactory;
    use crate::search::Clock;

    fn step(state: &str, thought: Option<&str>, tactic: &str) -> ProofStep {
        ProofStep {
            state: ProofState {
                goals_text: state.into(),
                state_id: 0,
                n_goals: 1,
                session: 0,
            },
            thought: thought.map(|t| Thought::new(t).unwrap()),
            tactic: Tactic::new(tactic).unwrap(),
            avg_logprob: None,
        }
    }

    fn traj(steps: Vec<ProofStep>) -> Trajectory {
        Trajectory {
            theorem_id: "t".into(),
            steps,
            success: true,
            generator_calls: 0,
            wall_ms: 0,
        }
    }

    #[test]
    fn dedup_on_full_triple() {
        let p = traj(vec![step("aabb", None, "r1"), step("ab", None, "r1")]);
        assert_eq!(dedup_pairs(&[p.clone(), p], 1).len(), 2);
        let a = traj(vec![step("s", Some("x"), "t")]);
        let b = traj(vec![step("s", Some("y"), "t")]);
        let out = dedup_pairs(&[a, b], 2);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].provenance, Provenance::StarIter(2));
    }

    fn ex(i: usize) -> TrainingExample {
        TrainingExample::direct(format!("s{i}"), "t", Provenance::Sft)
    }

    #[test]
    fn joint_assembly_counts() {
        let dir = tempfile::tempdir().unwrap();
        let d_t: Vec<_> = (0..100).map(ex).collect();
        let d_i: Vec<_> = (90..130).map(ex).collect();
        let a = assemble_dataset(DatasetMode::Joint, Some(&d_t), &d_i, dir.path(), "d").unwrap();
        assert_eq!(a.examples.len(), 130);
        assert_eq!(&a.examples[..100], &d_t[..]);
        let text = std::fs::read_to_string(&a.path).unwrap();
        assert_eq!(text.lines().count(), a.manifest.count);
        let on_disk: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(&a.manifest_path).unwrap()).unwrap();
        assert_eq!(on_disk, a.manifest);
    }

    #[test]
    fn continue_assembly_uses_round_data_only() {
        let dir = tempfile::tempdir().unwrap();
        let d_i: Vec<_> = (0..40).map(ex).collect();
        let a = assemble_dataset(DatasetMode::Continue, None, &d_i, dir.path(), "d").unwrap();
        assert_eq!(a.manifest.count, 40);
        assert!(matches!(
            assemble_dataset(DatasetMode::Joint, None, &d_i, dir.path(), "d"),
            Err(StarError::MissingDT)
        ));
    }

    fn config(problems: Vec<Theorem>) -> IterationConfig {
        let mut search = SearchConfig::new(default_star_budget());
        search.clock = Clock::Logical { ms_per_call: 0 };
        IterationConfig::new(problems, search)
    }

    #[test]
    fn defaults_match_collection_budget() {
        let b = config(vec![]).search.budget;
        assert_eq!((b.k, b.n, b.s, b.temperature), (32, 5, 1, 1.0));
        assert_eq!((b.per_problem_timeout_ms, b.max_proofs_per_problem), (60_000, 3));
    }

    #[test]
    fn zero_success_collection() {
        let env = ToyFactory::new(RuleSet::parse("r1: ab ->").unwrap());
        let cfg = config(vec![Theorem::new("a", "aabb"), Theorem::new("b", "ab")]);
        let (proofs, report) = collect_iteration(&cfg, &env, &ScriptedGenerator::constant("r9")).unwrap();
        assert!(proofs.is_empty());
        assert_eq!(report.success_rate, 0.0);
        assert!(matches!(
            collect_iteration(&config(vec![]), &env, &ScriptedGenerator::constant("r1")),
            Err(StarError::EmptyProblemSet)
        ));
    }

    #[test]
    fn trainer_failure_keeps_completed_reports() {
        let dir = tempfile::tempdir().unwrap();
        let env = ToyFactory::new(RuleSet::parse("r1: ab ->").unwrap());
        let mut cfg = config(vec![Theorem::new("a", "ab")]);
        cfg.search.budget.k = 2;
        cfg.dataset_mode = DatasetMode::Continue;
        let mut trainer = CommandTrainer {
            template: format!("test {{iteration}} -lt 2 && touch {}/ok-{{iteration}}", dir.path().display()),
        };
        let gen: Arc<dyn Generator> = Arc::new(ScriptedGenerator::constant("r1"));
        let err = run_iterations(3, &cfg, &env, gen, &mut trainer, None, dir.path(), None).unwrap_err();
        match err {
            StarError::TrainerFailed { iteration, completed, .. } => {
                assert_eq!(iteration, 2);
                assert_eq!(completed.len(), 1);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(dir.path().join("ok-1").exists());
        assert!(dir.path().join("iter_1/iteration.json").exists());
    }

    #[test]
    fn zero_iterations_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let env = ToyFactory::new(RuleSet::parse("r1: ab ->").unwrap());
        let cfg = config(vec![Theorem::new("a", "ab")]);
        let mut trainer = CommandTrainer { template: "true".into() };
        let gen: Arc<dyn Generator> = Arc::new(ScriptedGenerator::constant("r1"));
        let r = run_iterations(0, &cfg, &env, gen, &mut trainer, Some(&[]), dir.path(), None).unwrap();
        assert!(r.is_empty());
    }
}
