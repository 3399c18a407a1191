//! Retrospective rationale annotation of (state, tactic) corpora.
//!
//! Each pair is shown to an oracle chat model together with its ground-truth
//! tactic; the oracle writes a rationale in a fixed sectioned format and
//! echoes the tactic. Pairs whose echo matches the ground truth become
//! thought-augmented training examples.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::first_fenced_block;
use crate::model::{Provenance, TrainingExample};
use crate::util::sha256_hex;

const BUILTIN_TEMPLATE: &str = include_str!("../resources/annotation_prompt.txt");
const STATE_SLOT: &str = "{theorem[\"state_before\"]}";
const TACTIC_SLOT: &str = "{theorem[\"tactic\"]}";

pub const PLANNING_HEADER: &str = "### PLANNING OF REASONING";
pub const REASONING_HEADER: &str = "### REASONING";
pub const TACTIC_HEADER: &str = "### TACTIC";

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("prompt template unavailable: {0}")]
    TemplateMissing(String),
    #[error("tactic contains a newline")]
    MultilineTactic,
    #[error("missing section {0}")]
    MissingSection(&'static str),
    #[error("no fenced block under {TACTIC_HEADER}")]
    NoTacticBlock,
    #[error("oracle echoed {echoed:?}, expected {expected:?}")]
    TacticMismatch { expected: String, echoed: String },
    #[error("ledger corrupt at line {line}: {reason}")]
    LedgerCorrupt { line: usize, reason: String },
    #[error("failure rate {rate:.3} exceeds ceiling {ceiling:.3}")]
    FailureCeiling { rate: f64, ceiling: f64, report: AnnotationReport },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub state: String,
    pub tactic: String,
}

impl Pair {
    pub fn new(state: impl Into<String>, tactic: impl Into<String>) -> Self {
        Self {
            state: state.into(),
            tactic: tactic.into(),
        }
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(&(&self.state, &self.tactic)).expect("strings serialize").as_bytes())
    }
}

/// Drops pairs whose tactic spans more than one line. Order is preserved.
pub fn filter_pairs(pairs: &[Pair]) -> Vec<Pair> {
    pairs.iter().filter(|p| !p.tactic.contains('\n')).cloned().collect()
}

/// The oracle prompt, with slots for the goal state and the tactic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationTemplate {
    text: String,
}

impl AnnotationTemplate {
    pub fn builtin() -> Self {
        Self {
            text: BUILTIN_TEMPLATE.to_string(),
        }
    }

    pub fn from_text(text: String) -> Result<Self, AnnotateError> {
        for slot in [STATE_SLOT, TACTIC_SLOT] {
            if !text.contains(slot) {
                return Err(AnnotateError::TemplateMissing(format!("template lacks {slot}")));
            }
        }
        Ok(Self { text })
    }

    pub fn load(path: &Path) -> Result<Self, AnnotateError> {
        let text = std::fs::read_to_string(path).map_err(|e| AnnotateError::TemplateMissing(format!("{}: {e}", path.display())))?;
        Self::from_text(text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Fills both slots in one pass; substituted text is never re-expanded.
    pub fn render(&self, state: &str, tactic: &str) -> Result<String, AnnotateError> {
        if tactic.contains('\n') {
            return Err(AnnotateError::MultilineTactic);
        }
        let mut out = String::with_capacity(self.text.len() + state.len() + tactic.len());
        let mut rest = self.text.as_str();
        loop {
            let next = [(STATE_SLOT, state), (TACTIC_SLOT, tactic)]
                .into_iter()
                .filter_map(|(slot, value)| rest.find(slot).map(|at| (at, slot, value)))
                .min_by_key(|(at, _, _)| *at);
            match next {
                Some((at, slot, value)) => {
                    out.push_str(&rest[..at]);
                    out.push_str(value);
                    rest = &rest[at + slot.len()..];
                }
                None => {
                    out.push_str(rest);
                    return Ok(out);
                }
            }
        }
    }
}

pub fn build_annotation_prompt(state: &str, tactic: &str) -> Result<String, AnnotateError> {
    AnnotationTemplate::builtin().render(state, tactic)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResponseSections {
    pub planning: String,
    pub reasoning: String,
    /// Inner content of the first fenced block under the tactic header.
    pub tactic_block: String,
}

/// Splits a response on its three header lines.
pub fn parse_oracle_response(text: &str) -> Result<OracleResponseSections, AnnotateError> {
    let headers = [
        (PLANNING_HEADER, "PLANNING OF REASONING"),
        (REASONING_HEADER, "REASONING"),
        (TACTIC_HEADER, "TACTIC"),
    ];
    // Byte offsets of each header line's start and the end of that line.
    let mut found: [Option<(usize, usize)>; 3] = [None; 3];
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if let Some(i) = headers.iter().position(|(h, _)| trimmed == *h) {
            if found[i].is_none() {
                found[i] = Some((offset, offset + line.len()));
            }
        }
        offset += line.len();
    }
    let mut spans = [(0usize, 0usize); 3];
    for (i, (_, name)) in headers.iter().enumerate() {
        spans[i] = found[i].ok_or(AnnotateError::MissingSection(name))?;
    }
    let (planning_end, reasoning_end) = (spans[1].0, spans[2].0);
    if !(spans[0].1 <= planning_end && spans[1].1 <= reasoning_end) {
        return Err(AnnotateError::MissingSection("REASONING"));
    }
    let planning = text[spans[0].1..planning_end].trim();
    let reasoning = text[spans[1].1..reasoning_end].trim();
    if planning.is_empty() {
        return Err(AnnotateError::MissingSection("PLANNING OF REASONING"));
    }
    if reasoning.is_empty() {
        return Err(AnnotateError::MissingSection("REASONING"));
    }
    let block = first_fenced_block(&text[spans[2].1..]).ok_or(AnnotateError::NoTacticBlock)?;
    let tactic_block = block.trim();
    if tactic_block.is_empty() {
        return Err(AnnotateError::NoTacticBlock);
    }
    Ok(OracleResponseSections {
        planning: planning.to_string(),
        reasoning: reasoning.to_string(),
        tactic_block: tactic_block.to_string(),
    })
}

fn normalize_tactic(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Accepts the oracle's rationale iff its echoed tactic matches the ground
/// truth up to whitespace. The emitted tactic is always the ground truth.
pub fn validate_and_emit(pair: &Pair, sections: &OracleResponseSections) -> Result<TrainingExample, AnnotateError> {
    if normalize_tactic(&sections.tactic_block) != normalize_tactic(&pair.tactic) {
        return Err(AnnotateError::TacticMismatch {
            expected: pair.tactic.clone(),
            echoed: sections.tactic_block.clone(),
        });
    }
    Ok(TrainingExample::with_thought(
        pair.state.clone(),
        sections.reasoning.clone(),
        pair.tactic.clone(),
        Provenance::OracleAnnotated,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Error)]
#[error("oracle transport: {0}")]
pub struct TransportError(pub String);

pub trait OracleClient: Send + Sync {
    fn chat(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, TransportError>;
}

impl<F> OracleClient for F
where
    F: Fn(&[ChatMessage], f64) -> Result<String, TransportError> + Send + Sync,
{
    fn chat(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, TransportError> {
        self(messages, temperature)
    }
}

/// `POST {url}/chat` with `{"messages", "temperature"}` → `{"content"}`.
pub struct HttpOracle {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpOracle {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            api_key,
            client,
        })
    }
}

impl OracleClient for HttpOracle {
    fn chat(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, TransportError> {
        #[derive(Deserialize)]
        struct Reply {
            content: String,
        }
        let mut req = self
            .client
            .post(format!("{}/chat", self.url.trim_end_matches('/')))
            .json(&serde_json::json!({"messages": messages, "temperature": temperature}));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(TransportError(format!("HTTP {}", resp.status())));
        }
        resp.json::<Reply>().map(|r| r.content).map_err(|e| TransportError(e.to_string()))
    }
}

/// One canned oracle reply, keyed by the pair it answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub state: String,
    pub tactic: String,
    pub response: String,
}

/// Offline oracle answering from recorded responses. The last user message
/// must equal the rendered prompt of a known pair.
pub struct FixtureOracle {
    by_prompt: HashMap<String, String>,
}

impl FixtureOracle {
    pub fn new(entries: Vec<FixtureEntry>, template: &AnnotationTemplate) -> Result<Self, AnnotateError> {
        let mut by_prompt = HashMap::new();
        for e in entries {
            by_prompt.insert(template.render(&e.state, &e.tactic)?, e.response);
        }
        Ok(Self { by_prompt })
    }

    pub fn load(path: &Path, template: &AnnotationTemplate) -> Result<Self, AnnotateError> {
        let entries: Vec<FixtureEntry> = crate::model::read_jsonl(path)?;
        Self::new(entries, template)
    }
}

impl OracleClient for FixtureOracle {
    fn chat(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String, TransportError> {
        let prompt = messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .ok_or_else(|| TransportError("no user message".into()))?;
        self.by_prompt
            .get(&prompt.content)
            .cloned()
            .ok_or_else(|| TransportError("no recorded response for prompt".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub transport_retries: u32,
    pub parse_regenerations: u32,
    /// Doubled after every transport failure.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            transport_retries: 3,
            parse_regenerations: 1,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotateOptions {
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub temperature: f64,
    pub system_prompt: Option<String>,
    /// Largest tolerated (parse + transport failures) / annotated pairs.
    pub failure_ceiling: f64,
    pub template: AnnotationTemplate,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        Self {
            concurrency: 4,
            retry: RetryPolicy::default(),
            temperature: 0.0,
            system_prompt: None,
            failure_ceiling: 0.5,
            template: AnnotationTemplate::builtin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnnotationReport {
    pub input: usize,
    pub filtered: usize,
    pub accepted: usize,
    pub mismatched: usize,
    pub parse_failed: usize,
    pub transport_failed: usize,
    /// Oracle requests made by this run (ledger hits cost nothing).
    pub oracle_calls: u64,
}

impl AnnotationReport {
    pub fn reconciles(&self) -> bool {
        self.input == self.accepted + self.mismatched + self.parse_failed + self.transport_failed + self.filtered
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Accepted,
    Mismatched,
    ParseFailed,
    TransportFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub pair_hash: String,
    pub status: PairStatus,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
}

/// Reads a ledger. A torn final line (no trailing newline) is ignored;
/// anything else unparseable is corruption.
pub fn read_ledger(path: &Path) -> Result<HashMap<String, LedgerEntry>, AnnotateError> {
    let mut out = HashMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        n += 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LedgerEntry>(line.trim_end()) {
            Ok(e) => {
                out.insert(e.pair_hash.clone(), e);
            }
            Err(_) if !line.ends_with('\n') => break,
            Err(e) => return Err(AnnotateError::LedgerCorrupt { line: n, reason: e.to_string() }),
        }
    }
    Ok(out)
}

/// Final status of one pair and, when accepted, its rationale.
type PairResult = (PairStatus, Option<String>);

fn annotate_one(pair: &Pair, oracle: &dyn OracleClient, opts: &AnnotateOptions, calls: &AtomicU64) -> Result<PairResult, AnnotateError> {
    let prompt = opts.template.render(&pair.state, &pair.tactic)?;
    let mut messages = Vec::new();
    if let Some(sys) = &opts.system_prompt {
        messages.push(ChatMessage {
            role: "system".into(),
            content: sys.clone(),
        });
    }
    messages.push(ChatMessage {
        role: "user".into(),
        content: prompt,
    });

    for regen in 0..=opts.retry.parse_regenerations {
        let mut transport_try = 0;
        let response = loop {
            calls.fetch_add(1, Ordering::Relaxed);
            match oracle.chat(&messages, opts.temperature) {
                Ok(r) => break r,
                Err(e) if transport_try >= opts.retry.transport_retries => {
                    log::warn!("giving up on pair {}: {e}", pair.hash());
                    return Ok((PairStatus::TransportFailed, None));
                }
                Err(e) => {
                    log::debug!("oracle transport error ({e}); retrying");
                    std::thread::sleep(Duration::from_millis(opts.retry.backoff_ms << transport_try));
                    transport_try += 1;
                }
            }
        };
        match parse_oracle_response(&response) {
            Ok(sections) => {
                return Ok(match validate_and_emit(pair, &sections) {
                    Ok(ex) => (PairStatus::Accepted, ex.thought_text),
                    Err(e) => {
                        log::warn!("rejected pair {}: {e}", pair.hash());
                        (PairStatus::Mismatched, None)
                    }
                });
            }
            Err(e) if regen == opts.retry.parse_regenerations => {
                log::warn!("unparseable oracle response for pair {}: {e}", pair.hash());
            }
            Err(_) => {}
        }
    }
    Ok((PairStatus::ParseFailed, None))
}

/// Filters, prompts, parses and validates every pair, writing one ledger
/// line per oracle-resolved pair. Pairs already resolved in the ledger are
/// not sent again; pairs that previously failed in transport are retried.
pub fn annotate_corpus(
    pairs: &[Pair],
    oracle: &dyn OracleClient,
    opts: &AnnotateOptions,
    ledger_path: &Path,
) -> Result<(Vec<TrainingExample>, AnnotationReport), AnnotateError> {
    let mut resolved = read_ledger(ledger_path)?;
    resolved.retain(|_, e| e.status != PairStatus::TransportFailed);

    let kept = filter_pairs(pairs);
    let mut report = AnnotationReport {
        input: pairs.len(),
        filtered: pairs.len() - kept.len(),
        ..Default::default()
    };

    let mut work: Vec<(String, &Pair)> = Vec::new();
    {
        let mut queued = std::collections::HashSet::new();
        for p in &kept {
            let h = p.hash();
            if !resolved.contains_key(&h) && queued.insert(h.clone()) {
                work.push((h, p));
            }
        }
    }

    let mut ledger = OpenOptions::new().create(true).append(true).open(ledger_path)?;
    let calls = AtomicU64::new(0);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<PairResult, AnnotateError>)>();
    let mut first_error = None;
    std::thread::scope(|s| {
        for _ in 0..opts.concurrency.max(1).min(work.len().max(1)) {
            let tx = tx.clone();
            let (work, next, calls) = (&work, &next, &calls);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, pair)) = work.get(i) else { break };
                if tx.send((i, annotate_one(pair, oracle, opts, calls))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Single writer: every ledger line is appended from this thread.
        for (i, result) in rx {
            match result {
                Ok((status, thought)) => {
                    let entry = LedgerEntry {
                        pair_hash: work[i].0.clone(),
                        status,
                        timestamp: chrono::Utc::now().to_rfc3339(),
                        thought,
                    };
                    let line = serde_json::to_string(&entry).expect("ledger entry serializes");
                    if let Err(e) = writeln!(ledger, "{line}").and_then(|_| ledger.flush()) {
                        first_error.get_or_insert(AnnotateError::Io(e));
                    }
                    resolved.insert(entry.pair_hash.clone(), entry);
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }
    report.oracle_calls = calls.load(Ordering::Relaxed);

    let mut dataset = Vec::new();
    for p in &kept {
        let entry = resolved.get(&p.hash()).expect("every kept pair resolved");
        match entry.status {
            PairStatus::Accepted => {
                report.accepted += 1;
                let thought = entry.thought.clone().ok_or_else(|| AnnotateError::LedgerCorrupt {
                    line: 0,
                    reason: format!("accepted entry {} has no thought", entry.pair_hash),
                })?;
                dataset.push(TrainingExample::with_thought(
                    p.state.clone(),
                    thought,
                    p.tactic.clone(),
                    Provenance::OracleAnnotated,
                ));
            }
            PairStatus::Mismatched => report.mismatched += 1,
            PairStatus::ParseFailed => report.parse_failed += 1,
            PairStatus::TransportFailed => report.transport_failed += 1,
        }
    }

    let annotated = kept.len();
    if annotated > 0 {
        let rate = (report.parse_failed + report.transport_failed) as f64 / annotated as f64;
        if rate > opts.failure_ceiling {
            return Err(AnnotateError::FailureCeiling {
                rate,
                ceiling: opts.failure_ceiling,
                report,
            });
        }
    }
    Ok((dataset, report))
}
