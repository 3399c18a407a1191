//! Shared domain types: theorems, proof states, steps, trajectories,
//! training examples and search budgets, plus their line-oriented JSON forms.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("thought-augmented serialization requires a thought")]
    MissingThought,
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A problem to prove. `source` and `level` drive the category breakdowns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theorem {
    pub id: String,
    pub statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
}

impl Theorem {
    pub fn new(id: impl Into<String>, statement: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            statement: statement.into(),
            source: None,
            level: None,
        }
    }

    pub fn with_metadata(mut self, source: impl Into<String>, level: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self.level = Some(level.into());
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.is_empty() {
            return Err(invalid("theorem", "empty id"));
        }
        if self.statement.is_empty() {
            return Err(invalid("theorem", format!("{}: empty statement", self.id)));
        }
        Ok(())
    }
}

/// Reads a problem set: one `{id, statement, source, level}` object per line.
/// Ids must be unique.
pub fn read_problem_set(path: &Path) -> Result<Vec<Theorem>, ModelError> {
    let theorems: Vec<Theorem> = read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    for t in &theorems {
        t.validate()?;
        if !seen.insert(t.id.as_str()) {
            return Err(invalid("problem set", format!("duplicate id {:?}", t.id)));
        }
    }
    Ok(theorems)
}

/// Identifies the prover session that produced a state. Never serialized.
pub type SessionId = u64;

/// A prover goal state. `n_goals == 0` is the only finished-proof signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofState {
    pub goals_text: String,
    pub state_id: u64,
    pub n_goals: u32,
    #[serde(skip)]
    pub session: SessionId,
}

impl ProofState {
    pub fn is_finished(&self) -> bool {
        self.n_goals == 0
    }
}

/// A tactic; trailing whitespace is stripped and the rest must be nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Tactic(String);

impl Tactic {
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let mut text = text.into();
        text.truncate(text.trim_end().len());
        if text.trim_start().is_empty() {
            return Err(invalid("tactic", "empty"));
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Tactic {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Tactic::new(s)
    }
}

impl From<Tactic> for String {
    fn from(t: Tactic) -> String {
        t.0
    }
}

impl fmt::Display for Tactic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Natural-language rationale preceding a tactic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Thought(String);

impl Thought {
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(invalid("thought", "empty"));
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Thought {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Thought::new(s)
    }
}

impl From<Thought> for String {
    fn from(t: Thought) -> String {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofStep {
    pub state: ProofState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<Thought>,
    pub tactic: Tactic,
    /// Mean per-token log-probability of the generation that produced the step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_logprob: Option<f64>,
}

impl ProofStep {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self.avg_logprob {
            Some(lp) if !lp.is_finite() || lp > 0.0 => {
                Err(invalid("proof step", format!("avg_logprob {lp} not finite and <= 0")))
            }
            _ => Ok(()),
        }
    }
}

/// One search or sampling attempt on a theorem. Field order is the log's key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub theorem_id: String,
    pub steps: Vec<ProofStep>,
    pub success: bool,
    pub generator_calls: u64,
    pub wall_ms: u64,
}

impl Trajectory {
    pub fn tactics(&self) -> Vec<Tactic> {
        self.steps.iter().map(|s| s.tactic.clone()).collect()
    }
}

/// Binary reward: 1 for a successful trajectory, 0 otherwise.
pub fn trajectory_reward(t: &Trajectory) -> u8 {
    u8::from(t.success)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sft,
    OracleAnnotated,
    StarIter(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrainingExample {
    pub state_text: String,
    pub thought_text: Option<String>,
    pub tactic_text: String,
    pub provenance: Provenance,
}

impl TrainingExample {
    pub fn direct(state: impl Into<String>, tactic: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            state_text: state.into(),
            thought_text: None,
            tactic_text: tactic.into(),
            provenance,
        }
    }

    pub fn with_thought(
        state: impl Into<String>,
        thought: impl Into<String>,
        tactic: impl Into<String>,
        provenance: Provenance,
    ) -> Self {
        Self {
            state_text: state.into(),
            thought_text: Some(thought.into()),
            tactic_text: tactic.into(),
            provenance,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.state_text.is_empty() || self.tactic_text.is_empty() {
            return Err(invalid("training example", "empty state or tactic"));
        }
        if matches!(&self.thought_text, Some(t) if t.is_empty()) {
            return Err(invalid("training example", "empty thought"));
        }
        if self.provenance == Provenance::OracleAnnotated && self.tactic_text.contains('\n') {
            return Err(invalid("training example", "annotated tactic contains a newline"));
        }
        Ok(())
    }

    /// The dedup key: the exact (state, thought, tactic) triple.
    pub fn triple(&self) -> (&str, Option<&str>, &str) {
        (&self.state_text, self.thought_text.as_deref(), &self.tactic_text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleFormat {
    Direct,
    ThoughtAugmented,
}

#[derive(Serialize, Deserialize)]
struct ExampleLine<'a> {
    state: std::borrow::Cow<'a, str>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thought: Option<std::borrow::Cow<'a, str>>,
    tactic: std::borrow::Cow<'a, str>,
}

/// One JSON object on one line, keys in `state`, `thought`, `tactic` order.
/// Direct format never writes a thought.
pub fn serialize_example(ex: &TrainingExample, format: ExampleFormat) -> Result<String, ModelError> {
    let thought = match format {
        ExampleFormat::Direct => None,
        ExampleFormat::ThoughtAugmented => Some(
            ex.thought_text
                .as_deref()
                .ok_or(ModelError::MissingThought)?
                .into(),
        ),
    };
    let line = ExampleLine {
        state: ex.state_text.as_str().into(),
        thought,
        tactic: ex.tactic_text.as_str().into(),
    };
    Ok(serde_json::to_string(&line).expect("string fields always serialize"))
}

pub fn deserialize_example(line: &str, provenance: Provenance) -> Result<TrainingExample, serde_json::Error> {
    let parsed: ExampleLine<'_> = serde_json::from_str(line)?;
    Ok(TrainingExample {
        state_text: parsed.state.into_owned(),
        thought_text: parsed.thought.map(|t| t.into_owned()),
        tactic_text: parsed.tactic.into_owned(),
        provenance,
    })
}

/// Format used when a dataset mixes examples with and without thoughts.
pub fn natural_format(ex: &TrainingExample) -> ExampleFormat {
    if ex.thought_text.is_some() {
        ExampleFormat::ThoughtAugmented
    } else {
        ExampleFormat::Direct
    }
}

pub fn write_dataset<W: Write>(mut out: W, examples: &[TrainingExample]) -> Result<(), ModelError> {
    for ex in examples {
        let line = serialize_example(ex, natural_format(ex))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path, provenance: Provenance) -> Result<Vec<TrainingExample>, ModelError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = deserialize_example(&line, provenance).map_err(|source| ModelError::Json { line: i + 1, source })?;
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_trajectories<W: Write>(mut out: W, trajectories: &[Trajectory]) -> Result<(), ModelError> {
    for t in trajectories {
        let line = serde_json::to_string(t).map_err(|source| ModelError::Json { line: 0, source })?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, ModelError> {
    read_jsonl(path)
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ModelError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| ModelError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

/// Resource contract for one search or sampling run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Generator-call cap per attempt (expansion cap for best-first).
    pub n: u32,
    /// Attempts per problem.
    pub k: u32,
    /// Tactics requested per expanded node.
    pub s: u32,
    pub temperature: f64,
    /// 0 means unlimited.
    pub per_problem_timeout_ms: u64,
    pub max_proofs_per_problem: u32,
}

impl SearchBudget {
    pub fn validate(&self, sampling: bool) -> Result<(), ModelError> {
        if self.n == 0 || self.k == 0 || self.s == 0 || self.max_proofs_per_problem == 0 {
            return Err(invalid("budget", "N, K, S and max proofs must be >= 1"));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(invalid("budget", format!("temperature {}", self.temperature)));
        }
        if sampling && self.s != 1 {
            return Err(invalid("budget", "sampling requires S = 1"));
        }
        Ok(())
    }
}

fn invalid(what: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        what,
        reason: reason.into(),
    }
}
