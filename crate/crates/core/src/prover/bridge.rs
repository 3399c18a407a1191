//! JSON-lines subprocess protocol for external provers.
//!
//! ```text
//! → {"cmd":"init","id":1,"theorem":"..."}
//! ← {"id":1,"ok":true,"state_id":0,"goals":"...","n_goals":1}
//! → {"cmd":"tactic","id":2,"state_id":0,"tactic":"...","timeout_ms":1000}
//! ← {"id":2,"result":"new_state","state_id":1,"goals":"...","n_goals":1}
//! ```
//!
//! [`BridgeEnv`] is the client side. [`serve_bridge`] runs the toy prover as
//! a server and is the conformance reference for other adapters.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{fresh_session_id, EnvError, EnvFactory, ProverEnv, RuleSet, TacticOutcome, ToyProver};
use crate::model::{ProofState, SessionId, Tactic, Theorem};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
enum Request {
    Init { id: u64, theorem: String },
    Tactic { id: u64, state_id: u64, tactic: String, timeout_ms: u64 },
}

#[derive(Debug, Default, Deserialize)]
struct Response {
    id: Option<u64>,
    ok: Option<bool>,
    result: Option<String>,
    state_id: Option<u64>,
    goals: Option<String>,
    n_goals: Option<u32>,
    error: Option<String>,
    message: Option<String>,
}

/// Extra time the client waits beyond a tactic's own timeout before
/// declaring the bridge dead.
const REPLY_GRACE: Duration = Duration::from_secs(5);

pub struct BridgeEnv {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_req: u64,
    session: SessionId,
    known: HashSet<u64>,
    init_timeout: Duration,
}

impl BridgeEnv {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, EnvError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EnvError::Unavailable(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
            next_req: 1,
            session: fresh_session_id(),
            known: HashSet::new(),
            init_timeout: Duration::from_secs(120),
        })
    }

    pub fn with_init_timeout(mut self, timeout: Duration) -> Self {
        self.init_timeout = timeout;
        self
    }

    fn call(&mut self, req: &Request, id: u64, wait: Duration) -> Result<Response, EnvError> {
        let line = serde_json::to_string(req).expect("request serializes");
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| EnvError::Unavailable(format!("bridge write: {e}")))?;
        loop {
            let line = match self.lines.recv_timeout(wait) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(EnvError::Unavailable(format!("bridge read: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(EnvError::Unavailable(format!("no reply to request {id} within {wait:?}")))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(EnvError::Unavailable("bridge closed its output".into()))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let resp: Response = serde_json::from_str(&line)
                .map_err(|e| EnvError::Unavailable(format!("bad bridge reply {line:?}: {e}")))?;
            match resp.id {
                Some(rid) if rid == id => return Ok(resp),
                // A late reply to a request we already gave up on.
                Some(rid) if rid < id => continue,
                _ => return Err(EnvError::Unavailable(format!("reply id mismatch: {line}"))),
            }
        }
    }

    fn state_from(&mut self, state_id: Option<u64>, goals: Option<String>, n_goals: Option<u32>) -> Result<ProofState, EnvError> {
        let (Some(state_id), Some(goals_text), Some(n_goals)) = (state_id, goals, n_goals) else {
            return Err(EnvError::Unavailable("bridge state reply missing fields".into()));
        };
        self.known.insert(state_id);
        Ok(ProofState {
            goals_text,
            state_id,
            n_goals,
            session: self.session,
        })
    }
}

impl ProverEnv for BridgeEnv {
    fn init_theorem(&mut self, theorem: &Theorem) -> Result<ProofState, EnvError> {
        let id = self.next_req;
        self.next_req += 1;
        let req = Request::Init {
            id,
            theorem: theorem.statement.clone(),
        };
        let resp = self.call(&req, id, self.init_timeout)?;
        if resp.ok != Some(true) {
            return Err(EnvError::BadTheorem(resp.error.unwrap_or_else(|| "rejected".into())));
        }
        self.known.clear();
        self.state_from(resp.state_id, resp.goals, resp.n_goals)
    }

    fn apply_tactic(&mut self, state: &ProofState, tactic: &Tactic, timeout_ms: u64) -> Result<TacticOutcome, EnvError> {
        if state.session != self.session {
            return Err(EnvError::ForeignState {
                state_id: state.state_id,
                owner: state.session,
                session: self.session,
            });
        }
        if !self.known.contains(&state.state_id) {
            return Err(EnvError::UnknownState(state.state_id));
        }
        let id = self.next_req;
        self.next_req += 1;
        let req = Request::Tactic {
            id,
            state_id: state.state_id,
            tactic: tactic.as_str().to_string(),
            timeout_ms,
        };
        let wait = if timeout_ms == 0 {
            self.init_timeout
        } else {
            Duration::from_millis(timeout_ms) + REPLY_GRACE
        };
        let resp = self.call(&req, id, wait)?;
        match resp.result.as_deref() {
            Some("new_state") => {
                let next = self.state_from(resp.state_id, resp.goals, resp.n_goals)?;
                if next.n_goals == 0 {
                    Ok(TacticOutcome::ProofFinished)
                } else {
                    Ok(TacticOutcome::NewState(next))
                }
            }
            Some("proof_finished") => Ok(TacticOutcome::ProofFinished),
            Some("error") => Ok(TacticOutcome::TacticError(resp.message.unwrap_or_default())),
            Some("timeout") => Ok(TacticOutcome::Timeout),
            other => Err(EnvError::Unavailable(format!("unknown bridge result {other:?}"))),
        }
    }
}

impl Drop for BridgeEnv {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Spawns one bridge subprocess per session.
#[derive(Debug, Clone)]
pub struct BridgeFactory {
    pub program: String,
    pub args: Vec<String>,
}

impl BridgeFactory {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }
}

impl EnvFactory for BridgeFactory {
    fn open(&self) -> Result<Box<dyn ProverEnv>, EnvError> {
        Ok(Box::new(BridgeEnv::spawn(&self.program, &self.args)?))
    }
}

/// Serves the toy prover over the bridge protocol until `input` closes.
pub fn serve_bridge<R: BufRead, W: Write>(rules: Arc<RuleSet>, input: R, mut output: W) -> std::io::Result<()> {
    let mut prover = ToyProver::new(rules);
    let mut states: HashMap<u64, ProofState> = HashMap::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Err(e) => json!({"id": null, "ok": false, "error": format!("bad request: {e}")}),
            Ok(Request::Init { id, theorem }) => {
                match prover.init_theorem(&Theorem::new(format!("bridge-{id}"), theorem)) {
                    Ok(s) => {
                        states.clear();
                        let reply = json!({"id": id, "ok": true, "state_id": s.state_id, "goals": s.goals_text, "n_goals": s.n_goals});
                        states.insert(s.state_id, s);
                        reply
                    }
                    Err(e) => json!({"id": id, "ok": false, "error": e.to_string()}),
                }
            }
            Ok(Request::Tactic { id, state_id, tactic, timeout_ms }) => {
                let outcome = match (states.get(&state_id), Tactic::new(tactic)) {
                    (None, _) => Ok(TacticOutcome::TacticError(format!("unknown state {state_id}"))),
                    (Some(_), Err(_)) => Ok(TacticOutcome::TacticError("empty tactic".into())),
                    (Some(state), Ok(tactic)) => prover.apply_tactic(state, &tactic, timeout_ms),
                };
                match outcome {
                    Ok(TacticOutcome::NewState(s)) => {
                        let reply = json!({"id": id, "result": "new_state", "state_id": s.state_id, "goals": s.goals_text, "n_goals": s.n_goals});
                        states.insert(s.state_id, s);
                        reply
                    }
                    Ok(TacticOutcome::ProofFinished) => json!({"id": id, "result": "proof_finished"}),
                    Ok(TacticOutcome::TacticError(m)) => json!({"id": id, "result": "error", "message": m}),
                    Ok(TacticOutcome::Timeout) => json!({"id": id, "result": "timeout"}),
                    Err(e) => json!({"id": id, "result": "error", "message": e.to_string()}),
                }
            }
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}
