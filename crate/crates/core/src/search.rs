//! Proof search: best-first expansion and independent sampling rollouts.
//!
//! Both procedures run `K` independent attempts per theorem, each in its own
//! prover session with its own RNG stream derived from the run seed.
//! Generator calls are counted per requested sample: a best-first expansion
//! costs `S`, a sampling step costs 1, whether or not the tactic is legal.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::sync::OnceLock;
use std::time::Instant;

use ordered_float::OrderedFloat;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{Decode, GenRequest, GenRng, GenSample, Generator, Mode};
use crate::model::{ProofState, ProofStep, SearchBudget, Theorem, Trajectory};
use crate::prover::{replay_fresh, EnvFactory, ProverEnv, TacticOutcome};
use crate::util::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("results mix different attempt counts ({0} vs {1})")]
    MixedBudgets(u32, u32),
    #[error("no results")]
    NoResults,
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Sampling,
    BestFirst,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sampling => "sampling",
            Method::BestFirst => "search",
        }
    }
}

/// Frontier ordering. `Standard` expands the most probable prefix (largest
/// cumulative log-probability); `Literal` expands the largest cumulative
/// negative log-probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    #[default]
    Standard,
    Literal,
}

impl Priority {
    pub fn key(self, cum_logprob: f64) -> f64 {
        match self {
            Priority::Standard => cum_logprob,
            Priority::Literal => -cum_logprob,
        }
    }
}

/// Time source for timeouts and `wall_ms`. `Logical` charges a fixed cost
/// per generator call, which makes logs reproducible byte for byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Clock {
    #[default]
    Wall,
    Logical { ms_per_call: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub budget: SearchBudget,
    pub mode: Mode,
    pub decode: Decode,
    pub max_tokens: u32,
    pub priority: Priority,
    pub clock: Clock,
    /// Per tactic application, passed to the prover.
    pub tactic_timeout_ms: u64,
    pub workers: usize,
    /// Attempts of one theorem are issued in batches of at most this size.
    pub attempt_batch: u32,
    /// Best-first only: drop children whose goal text already appeared in
    /// this attempt's tree.
    pub dedup_states: bool,
    pub seed: u64,
}

impl SearchConfig {
    pub fn new(budget: SearchBudget) -> Self {
        Self {
            budget,
            mode: Mode::Direct,
            decode: Decode::Sample,
            max_tokens: 256,
            priority: Priority::Standard,
            clock: Clock::Wall,
            tactic_timeout_ms: 0,
            workers: 1,
            attempt_batch: 32,
            dedup_states: false,
            seed: 0,
        }
    }

    fn request(&self, state: &ProofState, n: u32) -> GenRequest {
        GenRequest {
            state_text: state.goals_text.clone(),
            mode: self.mode,
            n,
            temperature: self.budget.temperature,
            max_tokens: self.max_tokens,
            decode: self.decode,
        }
    }
}

/// Per-problem deadline shared by all attempts of one theorem.
#[derive(Debug, Default)]
pub struct Deadline {
    started: OnceLock<Instant>,
}

impl Deadline {
    pub fn new() -> Self {
        Self::default()
    }

    fn start(&self) -> Instant {
        *self.started.get_or_init(Instant::now)
    }

    fn elapsed_ms(&self, clock: Clock, calls: u64) -> u64 {
        match clock {
            Clock::Wall => self.start().elapsed().as_millis() as u64,
            Clock::Logical { ms_per_call } => calls.saturating_mul(ms_per_call),
        }
    }

    fn expired(&self, cfg: &SearchConfig, calls: u64) -> bool {
        let limit = cfg.budget.per_problem_timeout_ms;
        limit > 0 && self.elapsed_ms(cfg.clock, calls) >= limit
    }
}

/// One generator call as seen by the search: the node it was made for and
/// the samples it returned (malformed samples omitted).
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub goals_text: String,
    pub state_id: u64,
    pub cum_logprob: f64,
    pub depth: u32,
    pub samples: Vec<GenSample>,
}

#[derive(Debug, Clone)]
pub struct AttemptOutcome {
    pub trajectory: Trajectory,
    pub trace: Vec<Expansion>,
    /// Set when the attempt was aborted by a backend or prover fault.
    pub error: Option<String>,
}

struct AttemptLog<'a> {
    theorem: &'a Theorem,
    cfg: &'a SearchConfig,
    attempt_start: Instant,
    calls: u64,
    trace: Vec<Expansion>,
}

impl<'a> AttemptLog<'a> {
    fn new(theorem: &'a Theorem, cfg: &'a SearchConfig, deadline: &'a Deadline) -> Self {
        deadline.start();
        Self {
            theorem,
            cfg,
            attempt_start: Instant::now(),
            calls: 0,
            trace: Vec::new(),
        }
    }

    fn finish(self, steps: Vec<ProofStep>, success: bool, error: Option<String>) -> AttemptOutcome {
        let wall_ms = match self.cfg.clock {
            Clock::Wall => self.attempt_start.elapsed().as_millis() as u64,
            Clock::Logical { ms_per_call } => self.calls.saturating_mul(ms_per_call),
        };
        AttemptOutcome {
            trajectory: Trajectory {
                theorem_id: self.theorem.id.clone(),
                steps,
                success,
                generator_calls: self.calls,
                wall_ms,
            },
            trace: self.trace,
            error,
        }
    }
}

fn step_from(state: &ProofState, sample: &GenSample) -> ProofStep {
    ProofStep {
        state: state.clone(),
        thought: sample.thought.clone(),
        tactic: sample.tactic.clone(),
        avg_logprob: Some(sample.avg_logprob.min(0.0)),
    }
}

struct Node {
    state: ProofState,
    cum_logprob: f64,
    depth: u32,
    parent: Option<usize>,
    step: Option<ProofStep>,
}

#[derive(PartialEq, Eq)]
struct FrontierEntry {
    priority: OrderedFloat<f64>,
    seq: Reverse<u64>,
    node: usize,
}

impl Ord for FrontierEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.priority, self.seq).cmp(&(other.priority, other.seq))
    }
}

impl PartialOrd for FrontierEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn path_steps(nodes: &[Node], mut at: usize) -> Vec<ProofStep> {
    let mut steps = Vec::new();
    while let Some(step) = &nodes[at].step {
        steps.push(step.clone());
        at = nodes[at].parent.expect("non-root nodes have parents");
    }
    steps.reverse();
    steps
}

/// One best-first attempt: pop the highest-priority node, request `S`
/// tactics, apply each distinct tactic once. Stops on a finished proof, after
/// `N` expansions, on an empty frontier, or at the problem deadline. A
/// failed attempt records the path to the node it would have expanded next.
pub fn best_first_attempt(
    theorem: &Theorem,
    env: &mut dyn ProverEnv,
    gen: &dyn Generator,
    cfg: &SearchConfig,
    rng: &mut GenRng,
    deadline: &Deadline,
) -> AttemptOutcome {
    let mut log = AttemptLog::new(theorem, cfg, deadline);
    let root = match env.init_theorem(theorem) {
        Ok(s) => s,
        Err(e) => return log.finish(Vec::new(), false, Some(e.to_string())),
    };
    let mut nodes = vec![Node {
        state: root,
        cum_logprob: 0.0,
        depth: 0,
        parent: None,
        step: None,
    }];
    let mut frontier = BinaryHeap::new();
    let mut seq = 0u64;
    frontier.push(FrontierEntry {
        priority: OrderedFloat(cfg.priority.key(0.0)),
        seq: Reverse(seq),
        node: 0,
    });
    let mut seen: HashSet<String> = HashSet::new();
    if cfg.dedup_states {
        seen.insert(nodes[0].state.goals_text.clone());
    }
    let mut last_expanded = 0;
    let mut expansions = 0u32;

    while expansions < cfg.budget.n && !deadline.expired(cfg, log.calls) {
        let Some(entry) = frontier.pop() else { break };
        let at = entry.node;
        last_expanded = at;
        expansions += 1;
        log.calls += u64::from(cfg.budget.s);
        let samples = match gen.generate(&cfg.request(&nodes[at].state, cfg.budget.s), rng) {
            Ok(s) => s,
            Err(e) => return log.finish(path_steps(&nodes, at), false, Some(e.to_string())),
        };
        let samples: Vec<GenSample> = samples.into_iter().filter_map(Result::ok).collect();
        log.trace.push(Expansion {
            goals_text: nodes[at].state.goals_text.clone(),
            state_id: nodes[at].state.state_id,
            cum_logprob: nodes[at].cum_logprob,
            depth: nodes[at].depth,
            samples: samples.clone(),
        });

        let mut tried = HashSet::new();
        for sample in &samples {
            if !tried.insert(sample.tactic.as_str().to_string()) {
                continue;
            }
            let step = step_from(&nodes[at].state, sample);
            let outcome = match env.apply_tactic(&nodes[at].state, &sample.tactic, cfg.tactic_timeout_ms) {
                Ok(o) => o,
                Err(e) => return log.finish(path_steps(&nodes, at), false, Some(e.to_string())),
            };
            match outcome {
                TacticOutcome::ProofFinished => {
                    let mut steps = path_steps(&nodes, at);
                    steps.push(step);
                    return log.finish(steps, true, None);
                }
                TacticOutcome::NewState(child) => {
                    if cfg.dedup_states && !seen.insert(child.goals_text.clone()) {
                        continue;
                    }
                    let cum = nodes[at].cum_logprob + step.avg_logprob.unwrap_or(0.0);
                    nodes.push(Node {
                        state: child,
                        cum_logprob: cum,
                        depth: nodes[at].depth + 1,
                        parent: Some(at),
                        step: Some(step),
                    });
                    seq += 1;
                    frontier.push(FrontierEntry {
                        priority: OrderedFloat(cfg.priority.key(cum)),
                        seq: Reverse(seq),
                        node: nodes.len() - 1,
                    });
                }
                TacticOutcome::TacticError(_) | TacticOutcome::Timeout => {}
            }
        }
    }
    let best = frontier.peek().map_or(last_expanded, |e| e.node);
    log.finish(path_steps(&nodes, best), false, None)
}

/// One sampling rollout: draw a single tactic at a time from the current
/// state. Illegal or malformed samples are dropped and the state is
/// resampled; every call counts against `N`.
pub fn sampling_attempt(
    theorem: &Theorem,
    env: &mut dyn ProverEnv,
    gen: &dyn Generator,
    cfg: &SearchConfig,
    rng: &mut GenRng,
    deadline: &Deadline,
) -> AttemptOutcome {
    let mut log = AttemptLog::new(theorem, cfg, deadline);
    let mut state = match env.init_theorem(theorem) {
        Ok(s) => s,
        Err(e) => return log.finish(Vec::new(), false, Some(e.to_string())),
    };
    let mut steps: Vec<ProofStep> = Vec::new();
    let mut cum = 0.0;

    while log.calls < u64::from(cfg.budget.n) && !deadline.expired(cfg, log.calls) {
        log.calls += 1;
        let sample = match gen.generate(&cfg.request(&state, 1), rng) {
            Ok(mut s) if !s.is_empty() => s.swap_remove(0),
            Ok(_) => continue,
            Err(e) => return log.finish(steps, false, Some(e.to_string())),
        };
        let Ok(sample) = sample else { continue };
        log.trace.push(Expansion {
            goals_text: state.goals_text.clone(),
            state_id: state.state_id,
            cum_logprob: cum,
            depth: steps.len() as u32,
            samples: vec![sample.clone()],
        });
        let outcome = match env.apply_tactic(&state, &sample.tactic, cfg.tactic_timeout_ms) {
            Ok(o) => o,
            Err(e) => return log.finish(steps, false, Some(e.to_string())),
        };
        match outcome {
            TacticOutcome::ProofFinished => {
                steps.push(step_from(&state, &sample));
                return log.finish(steps, true, None);
            }
            TacticOutcome::NewState(next) => {
                let step = step_from(&state, &sample);
                cum += step.avg_logprob.unwrap_or(0.0);
                steps.push(step);
                state = next;
            }
            TacticOutcome::TacticError(_) | TacticOutcome::Timeout => {}
        }
    }
    log.finish(steps, false, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub theorem_id: String,
    /// Attempts requested per problem.
    pub k: u32,
    pub attempts: Vec<Trajectory>,
    pub solved: bool,
    /// Verified successes in attempt order, capped at the budget's proof limit.
    /// Attempts whose proof failed replay are stored with `success = false`.
    pub proofs: Vec<Trajectory>,
    pub generator_calls_total: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

fn run_attempt(
    method: Method,
    theorem: &Theorem,
    env: &dyn EnvFactory,
    gen: &dyn Generator,
    cfg: &SearchConfig,
    deadline: &Deadline,
    index: u32,
) -> AttemptOutcome {
    let mut rng = GenRng::seed_from_u64(derive_seed(cfg.seed, &theorem.id, u64::from(index)));
    let mut session = match env.open() {
        Ok(s) => s,
        Err(e) => {
            return AttemptOutcome {
                trajectory: Trajectory {
                    theorem_id: theorem.id.clone(),
                    steps: Vec::new(),
                    success: false,
                    generator_calls: 0,
                    wall_ms: 0,
                },
                trace: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    };
    match method {
        Method::BestFirst => best_first_attempt(theorem, session.as_mut(), gen, cfg, &mut rng, deadline),
        Method::Sampling => sampling_attempt(theorem, session.as_mut(), gen, cfg, &mut rng, deadline),
    }
}

/// Runs all `K` attempts for one theorem and selects verified proofs.
pub fn search_problem(
    method: Method,
    theorem: &Theorem,
    env: &dyn EnvFactory,
    gen: &dyn Generator,
    cfg: &SearchConfig,
) -> SearchResult {
    let deadline = Deadline::new();
    let k = cfg.budget.k;
    let batch = cfg.attempt_batch.max(1);
    let mut outcomes = Vec::with_capacity(k as usize);
    let mut start = 0;
    while start < k {
        let end = (start + batch).min(k);
        let chunk: Vec<AttemptOutcome> = (start..end)
            .into_par_iter()
            .map(|i| run_attempt(method, theorem, env, gen, cfg, &deadline, i))
            .collect();
        outcomes.extend(chunk);
        start = end;
    }

    let mut errors = Vec::new();
    let mut proofs = Vec::new();
    for (i, o) in outcomes.iter_mut().enumerate() {
        if let Some(e) = &o.error {
            errors.push(format!("attempt {i}: {e}"));
        }
        if !o.trajectory.success || proofs.len() >= cfg.budget.max_proofs_per_problem as usize {
            continue;
        }
        match replay_fresh(env, theorem, &o.trajectory.tactics(), cfg.tactic_timeout_ms) {
            Ok(true) => proofs.push(o.trajectory.clone()),
            Ok(false) => {
                o.trajectory.success = false;
                errors.push(format!("attempt {i}: proof failed replay"));
            }
            Err(e) => {
                o.trajectory.success = false;
                errors.push(format!("attempt {i}: replay: {e}"));
            }
        }
    }
    let attempts: Vec<Trajectory> = outcomes.into_iter().map(|o| o.trajectory).collect();
    SearchResult {
        theorem_id: theorem.id.clone(),
        k,
        generator_calls_total: attempts.iter().map(|t| t.generator_calls).sum(),
        solved: !proofs.is_empty(),
        attempts,
        proofs,
        errors,
    }
}

pub fn best_first_search(theorem: &Theorem, env: &dyn EnvFactory, gen: &dyn Generator, cfg: &SearchConfig) -> SearchResult {
    search_problem(Method::BestFirst, theorem, env, gen, cfg)
}

pub fn sampling_search(theorem: &Theorem, env: &dyn EnvFactory, gen: &dyn Generator, cfg: &SearchConfig) -> SearchResult {
    search_problem(Method::Sampling, theorem, env, gen, cfg)
}

/// Searches every theorem on a pool of `cfg.workers` threads. Results come
/// back in input order.
pub fn search_all(
    method: Method,
    theorems: &[Theorem],
    env: &dyn EnvFactory,
    gen: &dyn Generator,
    cfg: &SearchConfig,
) -> Result<Vec<SearchResult>, SearchError> {
    cfg.budget
        .validate(method == Method::Sampling)
        .map_err(|e| SearchError::InvalidBudget(e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| SearchError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        theorems
            .par_iter()
            .map(|t| search_problem(method, t, env, gen, cfg))
            .collect()
    }))
}

/// Fraction of theorems with at least one verified proof.
pub fn pass_at_k(results: &[SearchResult]) -> Result<f64, SearchError> {
    let first = results.first().ok_or(SearchError::NoResults)?;
    if let Some(r) = results.iter().find(|r| r.k != first.k) {
        return Err(SearchError::MixedBudgets(first.k, r.k));
    }
    Ok(results.iter().filter(|r| r.solved).count() as f64 / results.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{ScriptEntry, ScriptedGenerator};
    use crate::prover::{RuleSet, ToyFactory};

    fn budget(n: u32, k: u32, s: u32, t: f64) -> SearchBudget {
        SearchBudget {
            n,
            k,
            s,
            temperature: t,
            per_problem_timeout_ms: 0,
            max_proofs_per_problem: 3,
        }
    }

    fn toy() -> ToyFactory {
        ToyFactory::new(RuleSet::parse("r1: ab ->\nr2: ba ->").unwrap())
    }

    fn cfg(b: SearchBudget) -> SearchConfig {
        let mut c = SearchConfig::new(b);
        c.clock = Clock::Logical { ms_per_call: 0 };
        c
    }

    fn tactics(t: &Trajectory) -> Vec<&str> {
        t.steps.iter().map(|s| s.tactic.as_str()).collect()
    }

    #[test]
    fn dedup_states_prunes_cycles() {
        let env = ToyFactory::new(RuleSet::parse("x: ab -> ba\ny: ba -> ab").unwrap());
        let gen = ScriptedGenerator::constant("x")
            .with_state("ab", vec![ScriptEntry::new("x", 1.0)])
            .unwrap()
            .with_state("ba", vec![ScriptEntry::new("y", 1.0)])
            .unwrap();
        let th = Theorem::new("t", "ab");
        let mut c = cfg(budget(10, 1, 1, 1.0));
        assert_eq!(best_first_search(&th, &env, &gen, &c).generator_calls_total, 10);
        c.dedup_states = true;
        assert_eq!(best_first_search(&th, &env, &gen, &c).generator_calls_total, 2);
    }

    #[test]
    fn best_first_constant_generator() {
        let th = Theorem::new("t", "aabb");
        let r = best_first_search(&th, &toy(), &ScriptedGenerator::constant("r1"), &cfg(budget(50, 1, 1, 0.0)));
        assert!(r.solved);
        assert_eq!(tactics(&r.proofs[0]), ["r1", "r1"]);
        assert_eq!(r.proofs[0].generator_calls, 2);
    }

    #[test]
    fn best_first_budget_one() {
        let th = Theorem::new("t", "aabb");
        for s in [1, 3] {
            let r = best_first_search(&th, &toy(), &ScriptedGenerator::constant("r1"), &cfg(budget(1, 1, s, 0.0)));
            assert!(!r.solved);
            assert_eq!(r.generator_calls_total, u64::from(s));
        }
    }

    #[test]
    fn frontier_prefers_higher_cumulative_logprob() {
        let mut heap = BinaryHeap::new();
        heap.push(FrontierEntry { priority: OrderedFloat(-0.3), seq: Reverse(0), node: 0 });
        heap.push(FrontierEntry { priority: OrderedFloat(-0.25), seq: Reverse(1), node: 1 });
        heap.push(FrontierEntry { priority: OrderedFloat(-0.25), seq: Reverse(2), node: 2 });
        assert_eq!(heap.pop().unwrap().node, 1);
        assert_eq!(heap.pop().unwrap().node, 2);
        assert_eq!(heap.pop().unwrap().node, 0);
        assert_eq!(Priority::Literal.key(-0.3), 0.3);
    }

    #[test]
    fn sampling_argmax_rollout() {
        let th = Theorem::new("t", "aabb");
        let gen = ScriptedGenerator::new(vec![ScriptEntry::new("r1", 0.8), ScriptEntry::new("r2", 0.2)]).unwrap();
        let r = sampling_search(&th, &toy(), &gen, &cfg(budget(50, 1, 1, 0.0)));
        assert!(r.solved);
        assert_eq!(tactics(&r.proofs[0]), ["r1", "r1"]);
        assert_eq!(r.proofs[0].generator_calls, 2);
        for step in &r.proofs[0].steps {
            assert!((step.avg_logprob.unwrap() - 0.8f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn illegal_tactics_burn_the_budget() {
        let th = Theorem::new("t", "aabb");
        let r = sampling_search(&th, &toy(), &ScriptedGenerator::constant("r9"), &cfg(budget(5, 1, 1, 0.7)));
        assert!(!r.solved);
        assert_eq!(r.attempts[0].generator_calls, 5);
        assert!(r.attempts[0].steps.is_empty());
    }

    #[test]
    fn proofs_are_capped_in_attempt_order() {
        let th = Theorem::new("t", "aabb");
        let r = sampling_search(&th, &toy(), &ScriptedGenerator::constant("r1"), &cfg(budget(5, 7, 1, 1.0)));
        assert_eq!(r.attempts.len(), 7);
        assert!(r.attempts.iter().all(|a| a.success));
        assert_eq!(r.proofs.len(), 3);
    }

    #[test]
    fn logical_timeout_stops_rollouts() {
        let th = Theorem::new("t", "aabb");
        let mut c = cfg(budget(50, 1, 1, 0.0));
        c.budget.per_problem_timeout_ms = 3;
        c.clock = Clock::Logical { ms_per_call: 1 };
        let r = sampling_search(&th, &toy(), &ScriptedGenerator::constant("r9"), &c);
        assert_eq!(r.attempts[0].generator_calls, 3);
        assert_eq!(r.attempts[0].wall_ms, 3);
    }

    #[test]
    fn bad_theorem_is_a_recorded_failure() {
        let th = Theorem::new("t", "");
        let r = sampling_search(&th, &toy(), &ScriptedGenerator::constant("r1"), &cfg(budget(5, 2, 1, 0.0)));
        assert!(!r.solved);
        assert_eq!(r.errors.len(), 2);
    }

    fn result(k: u32, solved: bool) -> SearchResult {
        SearchResult {
            theorem_id: "x".into(),
            k,
            attempts: vec![],
            solved,
            proofs: vec![],
            generator_calls_total: 0,
            errors: vec![],
        }
    }

    #[test]
    fn pass_rate() {
        let rs = [result(4, true), result(4, false), result(4, true), result(4, false)];
        assert_eq!(pass_at_k(&rs).unwrap(), 0.5);
        assert_eq!(pass_at_k(&[result(1, false), result(1, false)]).unwrap(), 0.0);
        assert_eq!(pass_at_k(&[result(1, false), result(2, false)]), Err(SearchError::MixedBudgets(1, 2)));
        assert_eq!(pass_at_k(&[]), Err(SearchError::NoResults));
    }

    #[test]
    fn search_all_rejects_sampling_with_s_above_one() {
        let th = [Theorem::new("t", "ab")];
        let e = search_all(Method::Sampling, &th, &toy(), &ScriptedGenerator::constant("r1"), &cfg(budget(5, 1, 2, 0.0)));
        assert!(matches!(e, Err(SearchError::InvalidBudget(_))));
    }
}
