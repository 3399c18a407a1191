//! Bounded pool of prover sessions, used in front of the subprocess bridge
//! so that concurrent attempts reuse a fixed number of processes.

use std::sync::{Arc, Condvar, Mutex};

use super::{EnvError, EnvFactory, ProverEnv, TacticOutcome};
use crate::model::{ProofState, Tactic, Theorem};

struct Inner {
    factory: Box<dyn EnvFactory>,
    max: usize,
    slots: Mutex<Slots>,
    freed: Condvar,
}

struct Slots {
    idle: Vec<Box<dyn ProverEnv>>,
    open: usize,
}

#[derive(Clone)]
pub struct SessionPool {
    inner: Arc<Inner>,
}

impl SessionPool {
    pub fn new(factory: Box<dyn EnvFactory>, max_sessions: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                factory,
                max: max_sessions.max(1),
                slots: Mutex::new(Slots { idle: Vec::new(), open: 0 }),
                freed: Condvar::new(),
            }),
        }
    }

    /// Blocks until a session is idle or the pool can open another.
    pub fn checkout(&self) -> Result<PooledSession, EnvError> {
        let mut slots = self.inner.slots.lock().expect("pool lock");
        loop {
            if let Some(env) = slots.idle.pop() {
                return Ok(PooledSession { env: Some(env), pool: self.inner.clone() });
            }
            if slots.open < self.inner.max {
                slots.open += 1;
                drop(slots);
                return match self.inner.factory.open() {
                    Ok(env) => Ok(PooledSession { env: Some(env), pool: self.inner.clone() }),
                    Err(e) => {
                        self.inner.slots.lock().expect("pool lock").open -= 1;
                        self.inner.freed.notify_one();
                        Err(e)
                    }
                };
            }
            slots = self.inner.freed.wait(slots).expect("pool lock");
        }
    }

    pub fn open_sessions(&self) -> usize {
        self.inner.slots.lock().expect("pool lock").open
    }
}

impl EnvFactory for SessionPool {
    fn open(&self) -> Result<Box<dyn ProverEnv>, EnvError> {
        Ok(Box::new(self.checkout()?))
    }
}

/// Returns its session to the pool on drop, unless the session faulted.
pub struct PooledSession {
    env: Option<Box<dyn ProverEnv>>,
    pool: Arc<Inner>,
}

impl PooledSession {
    fn env(&mut self) -> &mut Box<dyn ProverEnv> {
        self.env.as_mut().expect("session present until drop")
    }

    fn discard_on_fault<T>(&mut self, r: Result<T, EnvError>) -> Result<T, EnvError> {
        if let Err(EnvError::Unavailable(_)) = &r {
            self.env = None;
        }
        r
    }
}

impl ProverEnv for PooledSession {
    fn init_theorem(&mut self, theorem: &Theorem) -> Result<ProofState, EnvError> {
        let Some(env) = self.env.as_mut() else {
            return Err(EnvError::Unavailable("pooled session faulted".into()));
        };
        let r = env.init_theorem(theorem);
        self.discard_on_fault(r)
    }

    fn apply_tactic(&mut self, state: &ProofState, tactic: &Tactic, timeout_ms: u64) -> Result<TacticOutcome, EnvError> {
        if self.env.is_none() {
            return Err(EnvError::Unavailable("pooled session faulted".into()));
        }
        let r = self.env().apply_tactic(state, tactic, timeout_ms);
        self.discard_on_fault(r)
    }
}

impl Drop for PooledSession {
    fn drop(&mut self) {
        let mut slots = self.pool.slots.lock().expect("pool lock");
        match self.env.take() {
            Some(env) => slots.idle.push(env),
            None => slots.open -= 1,
        }
        self.pool.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prover::{RuleSet, ToyFactory};
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn pool_bounds_and_reuses_sessions() {
        let pool = SessionPool::new(Box::new(ToyFactory::new(RuleSet::parse("r1: ab ->").unwrap())), 2);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..20 {
                        let mut env = pool.open().unwrap();
                        peak.fetch_max(pool.open_sessions(), Ordering::SeqCst);
                        let root = env.init_theorem(&Theorem::new("t", "ab")).unwrap();
                        let out = env.apply_tactic(&root, &Tactic::new("r1").unwrap(), 0).unwrap();
                        assert_eq!(out, TacticOutcome::ProofFinished);
                    }
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert!(pool.open_sessions() <= 2);
    }
}
