//! Client for a completion server speaking `POST /generate`.
//!
//! Request: `{"prompt", "n", "temperature", "max_tokens", "stop", "decode",
//! "logprob_scope"}`.
//! Response: `{"completions": [{"text", "avg_logprob"}]}`; a per-token
//! `token_logprobs` array is accepted instead and reduced by its mean. The
//! server decides which tokens enter the average according to
//! `logprob_scope`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CompletionGrammar, Decode, GenError, GenRequest, GenRng, Generator, MalformedCompletion, Mode, SampleResult};
use crate::util::Semaphore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpGeneratorConfig {
    pub url: String,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
    pub retries: u32,
    pub retry_backoff_ms: u64,
    pub stop: Vec<String>,
    /// `{state}` is replaced by the goal text.
    pub direct_template: String,
    pub thought_template: String,
    pub tactic_marker: String,
    pub logprob_scope: LogprobScope,
}

/// Tokens that `avg_logprob` averages over in thought-augmented mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogprobScope {
    /// Thought and tactic together.
    #[default]
    Completion,
    /// Only the tactic after the marker.
    Tactic,
}

impl Default for HttpGeneratorConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000".into(),
            max_in_flight: 8,
            timeout_ms: 120_000,
            retries: 2,
            retry_backoff_ms: 500,
            stop: Vec::new(),
            direct_template: "### State\n{state}\n".into(),
            thought_template: "### State\n{state}\n### Reasoning\n".into(),
            tactic_marker: super::DEFAULT_TACTIC_MARKER.into(),
            logprob_scope: LogprobScope::Completion,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: String,
    n: u32,
    temperature: f64,
    max_tokens: u32,
    stop: &'a [String],
    decode: Decode,
    logprob_scope: LogprobScope,
}

#[derive(Deserialize)]
struct WireResponse {
    completions: Vec<WireCompletion>,
}

#[derive(Deserialize)]
struct WireCompletion {
    text: String,
    #[serde(default)]
    avg_logprob: Option<f64>,
    #[serde(default)]
    token_logprobs: Option<Vec<f64>>,
}

pub struct HttpGenerator {
    config: HttpGeneratorConfig,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
    grammar: CompletionGrammar,
}

impl HttpGenerator {
    pub fn new(config: HttpGeneratorConfig) -> Result<Self, GenError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| GenError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            in_flight: Semaphore::new(config.max_in_flight),
            grammar: CompletionGrammar::new(config.tactic_marker.clone()),
            config,
            client,
        })
    }

    pub fn prompt(&self, state: &str, mode: Mode) -> String {
        let template = match mode {
            Mode::Direct => &self.config.direct_template,
            Mode::ThoughtAugmented => &self.config.thought_template,
        };
        template.replacen("{state}", state, 1)
    }

    fn endpoint(&self) -> String {
        format!("{}/generate", self.config.url.trim_end_matches('/'))
    }

    fn post_once(&self, body: &WireRequest<'_>) -> Result<WireResponse, String> {
        let _permit = self.in_flight.acquire();
        let resp = self.client.post(self.endpoint()).json(body).send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        resp.json::<WireResponse>().map_err(|e| format!("bad response body: {e}"))
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, req: &GenRequest, _rng: &mut GenRng) -> Result<Vec<SampleResult>, GenError> {
        if req.n == 0 || req.max_tokens == 0 {
            return Err(GenError::InvalidRequest("n and max_tokens must be >= 1".into()));
        }
        let body = WireRequest {
            prompt: self.prompt(&req.state_text, req.mode),
            n: req.n,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            stop: &self.config.stop,
            decode: req.decode,
            logprob_scope: self.config.logprob_scope,
        };
        let mut attempt = 0;
        let resp = loop {
            match self.post_once(&body) {
                Ok(r) => break r,
                Err(e) if attempt >= self.config.retries => return Err(GenError::BackendUnavailable(e)),
                Err(e) => {
                    log::warn!("generate failed ({e}); retrying");
                    std::thread::sleep(Duration::from_millis(self.config.retry_backoff_ms << attempt));
                    attempt += 1;
                }
            }
        };
        Ok(resp
            .completions
            .into_iter()
            .take(req.n as usize)
            .map(|c| {
                let lp = match (c.avg_logprob, &c.token_logprobs) {
                    (Some(lp), _) => lp,
                    (None, Some(toks)) if !toks.is_empty() => toks.iter().sum::<f64>() / toks.len() as f64,
                    _ => {
                        return Err(MalformedCompletion {
                            raw: c.text,
                            reason: "missing log-probability",
                        })
                    }
                };
                if !lp.is_finite() || lp > 0.0 {
                    return Err(MalformedCompletion {
                        raw: c.text,
                        reason: "log-probability not finite and <= 0",
                    });
                }
                self.grammar.sample_from(c.text, req.mode, lp)
            })
            .collect())
    }

    fn describe(&self) -> String {
        format!("http({})", self.config.url)
    }
}
