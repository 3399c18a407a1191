//! Prover environments: the transition function the search drives.
//!
//! A [`ProverEnv`] is one exclusive session. Searches obtain sessions from an
//! [`EnvFactory`], one per attempt, and never share them.

mod bridge;
mod pool;
mod toy;

pub use bridge::{serve_bridge, BridgeEnv, BridgeFactory};
pub use pool::{PooledSession, SessionPool};
pub use toy::{RewriteRule, RuleError, RuleSet, ToyFactory, ToyProver};

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::model::{ProofState, SessionId, Tactic, Theorem};

#[derive(Debug, Clone, PartialEq)]
pub enum TacticOutcome {
    /// Carries a state with at least one goal.
    NewState(ProofState),
    ProofFinished,
    TacticError(String),
    Timeout,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("prover unavailable: {0}")]
    Unavailable(String),
    #[error("theorem rejected: {0}")]
    BadTheorem(String),
    #[error("state {state_id} belongs to session {owner}, not session {session}")]
    ForeignState { state_id: u64, owner: SessionId, session: SessionId },
    #[error("state {0} was not produced by this session")]
    UnknownState(u64),
}

pub trait ProverEnv: Send {
    /// Starts a proof of `theorem`, returning its root state (id 0).
    fn init_theorem(&mut self, theorem: &Theorem) -> Result<ProofState, EnvError>;

    /// Prover-level failures come back as [`TacticOutcome::TacticError`];
    /// `Err` is reserved for transport and session faults.
    fn apply_tactic(&mut self, state: &ProofState, tactic: &Tactic, timeout_ms: u64) -> Result<TacticOutcome, EnvError>;
}

impl<E: ProverEnv + ?Sized> ProverEnv for Box<E> {
    fn init_theorem(&mut self, theorem: &Theorem) -> Result<ProofState, EnvError> {
        (**self).init_theorem(theorem)
    }

    fn apply_tactic(&mut self, state: &ProofState, tactic: &Tactic, timeout_ms: u64) -> Result<TacticOutcome, EnvError> {
        (**self).apply_tactic(state, tactic, timeout_ms)
    }
}

pub trait EnvFactory: Send + Sync {
    fn open(&self) -> Result<Box<dyn ProverEnv>, EnvError>;
}

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_session_id() -> SessionId {
    NEXT_SESSION.fetch_add(1, Ordering::Relaxed)
}

/// True iff `steps` applied from the theorem's root end in a finished proof
/// exactly at the last step, with no error or timeout along the way.
pub fn replay(env: &mut dyn ProverEnv, theorem: &Theorem, steps: &[Tactic], timeout_ms: u64) -> Result<bool, EnvError> {
    let mut state = match env.init_theorem(theorem) {
        Ok(s) => s,
        Err(EnvError::BadTheorem(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    for (i, tactic) in steps.iter().enumerate() {
        match env.apply_tactic(&state, tactic, timeout_ms)? {
            TacticOutcome::NewState(next) => state = next,
            TacticOutcome::ProofFinished => return Ok(i + 1 == steps.len()),
            TacticOutcome::TacticError(_) | TacticOutcome::Timeout => return Ok(false),
        }
    }
    Ok(false)
}

/// [`replay`] in a fresh session from `factory`.
pub fn replay_fresh(factory: &dyn EnvFactory, theorem: &Theorem, steps: &[Tactic], timeout_ms: u64) -> Result<bool, EnvError> {
    let mut env = factory.open()?;
    replay(env.as_mut(), theorem, steps, timeout_ms)
}
