//! Tactic generators: the policy that proposes (thought, tactic) pairs for a
//! proof state.
//!
//! Every implementation returns raw completions that are parsed with the same
//! grammar, so mocks exercise the parser exactly like a remote model does.

mod count;
mod http;
mod scripted;
mod toy;

pub use count::{feature_key, CountPolicy, FeatureKey};
pub use http::{HttpGenerator, HttpGeneratorConfig, LogprobScope};
pub use scripted::{ScriptEntry, ScriptedGenerator};
pub use toy::{GreedyToyGenerator, ToySolverGenerator};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Tactic, Thought};

/// RNG handed to generators; one independent stream per attempt.
pub type GenRng = rand_chacha::ChaCha8Rng;

pub const DEFAULT_TACTIC_MARKER: &str = "### Tactic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Direct,
    ThoughtAugmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decode {
    #[default]
    Sample,
    Beam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub state_text: String,
    pub mode: Mode,
    pub n: u32,
    /// Ignored when `decode` is beam.
    pub temperature: f64,
    pub max_tokens: u32,
    pub decode: Decode,
}

impl GenRequest {
    pub fn new(state_text: impl Into<String>, n: u32, temperature: f64) -> Self {
        Self {
            state_text: state_text.into(),
            mode: Mode::Direct,
            n,
            temperature,
            max_tokens: 256,
            decode: Decode::Sample,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Temperature actually used for sampling; beam decoding is greedy here.
    pub fn effective_temperature(&self) -> f64 {
        match self.decode {
            Decode::Sample => self.temperature,
            Decode::Beam => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSample {
    pub raw_text: String,
    pub thought: Option<Thought>,
    pub tactic: Tactic,
    pub avg_logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("malformed completion ({reason}): {raw:?}")]
pub struct MalformedCompletion {
    pub raw: String,
    pub reason: &'static str,
}

pub type SampleResult = Result<GenSample, MalformedCompletion>;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("generation backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cannot fit a policy on an empty dataset")]
    EmptyDataset,
}

pub trait Generator: Send + Sync {
    /// Up to `req.n` samples in backend order. Unparseable completions are
    /// reported per sample.
    fn generate(&self, req: &GenRequest, rng: &mut GenRng) -> Result<Vec<SampleResult>, GenError>;

    /// Short identity string recorded in run manifests.
    fn describe(&self) -> String;
}

impl<G: Generator + ?Sized> Generator for std::sync::Arc<G> {
    fn generate(&self, req: &GenRequest, rng: &mut GenRng) -> Result<Vec<SampleResult>, GenError> {
        (**self).generate(req, rng)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Completion grammar.
///
/// Direct mode: the first nonblank line is the tactic. Thought mode:
/// `<thought>\n<marker>\n```[tag]\n<tactic>\n```` where the tactic is the
/// content of the first fenced block after the marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionGrammar {
    pub marker: String,
}

impl Default for CompletionGrammar {
    fn default() -> Self {
        Self {
            marker: DEFAULT_TACTIC_MARKER.to_string(),
        }
    }
}

impl CompletionGrammar {
    pub fn new(marker: impl Into<String>) -> Self {
        Self { marker: marker.into() }
    }

    pub fn parse(&self, raw: &str, mode: Mode) -> Result<(Option<Thought>, Tactic), MalformedCompletion> {
        let bad = |reason| MalformedCompletion {
            raw: raw.to_string(),
            reason,
        };
        match mode {
            Mode::Direct => {
                let line = raw.lines().map(str::trim).find(|l| !l.is_empty()).ok_or_else(|| bad("empty tactic"))?;
                Ok((None, Tactic::new(line).map_err(|_| bad("empty tactic"))?))
            }
            Mode::ThoughtAugmented => {
                let at = raw.find(&self.marker).ok_or_else(|| bad("missing tactic marker"))?;
                let thought = Thought::new(raw[..at].trim()).map_err(|_| bad("empty thought"))?;
                let block = first_fenced_block(&raw[at + self.marker.len()..]).ok_or_else(|| bad("missing tactic fence"))?;
                let tactic = Tactic::new(block.trim()).map_err(|_| bad("empty tactic"))?;
                Ok((Some(thought), tactic))
            }
        }
    }

    /// Inverse of [`parse`](Self::parse) for grammar-conforming pairs.
    pub fn render(&self, thought: Option<&str>, tactic: &str, mode: Mode) -> String {
        match (mode, thought) {
            (Mode::ThoughtAugmented, Some(t)) => format!("{t}\n{}\n```\n{tactic}\n```", self.marker),
            _ => tactic.to_string(),
        }
    }

    pub(crate) fn sample_from(&self, raw: String, mode: Mode, avg_logprob: f64) -> SampleResult {
        let (thought, tactic) = self.parse(&raw, mode)?;
        Ok(GenSample {
            raw_text: raw,
            thought,
            tactic,
            avg_logprob,
        })
    }
}

/// [`CompletionGrammar::parse`] with the default marker.
pub fn parse_completion(raw: &str, mode: Mode) -> Result<(Option<Thought>, Tactic), MalformedCompletion> {
    CompletionGrammar::default().parse(raw, mode)
}

/// Content between the first opening fence (tag line skipped) and the next
/// closing fence.
pub(crate) fn first_fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after_open = &text[open + 3..];
    let body_start = after_open.find('\n')? + 1;
    let body = &after_open[body_start..];
    let close = body.find("```")?;
    Some(&body[..close])
}

/// Index drawn from `probs` after temperature scaling. Temperature 0 is
/// argmax with ties to the lowest index.
pub(crate) fn sample_index(probs: &[f64], temperature: f64, rng: &mut GenRng) -> usize {
    debug_assert!(!probs.is_empty());
    let argmax = probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
    if temperature <= 0.0 {
        return argmax;
    }
    let top = probs[argmax].ln();
    let weights: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { ((p.ln() - top) / temperature).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    argmax
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn direct_mode_takes_first_line() {
        let (th, t) = parse_completion("norm_num", Mode::Direct).unwrap();
        assert_eq!((th, t.as_str()), (None, "norm_num"));
        assert_eq!(parse_completion("\n  simp\nextra", Mode::Direct).unwrap().1.as_str(), "simp");
        assert!(parse_completion("   \n", Mode::Direct).is_err());
    }

    #[test]
    fn thought_mode_parses_fenced_tactic() {
        let (th, t) = parse_completion("T.\n### Tactic\n```lean4\nnlinarith\n```", Mode::ThoughtAugmented).unwrap();
        assert_eq!(th.unwrap().as_str(), "T.");
        assert_eq!(t.as_str(), "nlinarith");

        let (th, t) = parse_completion(
            "The goal reduces by cancelling the leftmost pair.\n### Tactic\n```\nr1\n```",
            Mode::ThoughtAugmented,
        )
        .unwrap();
        assert_eq!(th.unwrap().as_str(), "The goal reduces by cancelling the leftmost pair.");
        assert_eq!(t.as_str(), "r1");
    }

    #[test]
    fn thought_mode_errors() {
        let err = |s| parse_completion(s, Mode::ThoughtAugmented).unwrap_err().reason;
        assert_eq!(err("just words"), "missing tactic marker");
        assert_eq!(err("T.\n### Tactic\nr1"), "missing tactic fence");
        assert_eq!(err("T.\n### Tactic\n```\n  \n```"), "empty tactic");
        assert_eq!(err("\n### Tactic\n```\nr1\n```"), "empty thought");
    }

    #[test]
    fn custom_marker() {
        let g = CompletionGrammar::new("-- tactic:");
        let raw = g.render(Some("why"), "simp", Mode::ThoughtAugmented);
        assert_eq!(g.parse(&raw, Mode::ThoughtAugmented).unwrap().1.as_str(), "simp");
    }

    #[test]
    fn zero_temperature_is_argmax() {
        let mut rng = GenRng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(sample_index(&[0.2, 0.5, 0.3], 0.0, &mut rng), 1);
            assert_eq!(sample_index(&[0.5, 0.5], 0.0, &mut rng), 0);
        }
    }

    #[test]
    fn temperature_sharpens_toward_argmax() {
        let probs = [0.3, 0.7];
        let freq = |t: f64| {
            let mut rng = GenRng::seed_from_u64(7);
            (0..4000).filter(|_| sample_index(&probs, t, &mut rng) == 1).count() as f64 / 4000.0
        };
        let (hot, one, cold) = (freq(2.0), freq(1.0), freq(0.2));
        assert!((one - 0.7).abs() < 0.03, "{one}");
        assert!(hot < one && one < cold, "{hot} {one} {cold}");
        assert!(cold > 0.98);
    }

    proptest! {
        #[test]
        fn render_then_parse_is_identity(
            thought in "[A-Za-z][A-Za-z .,]{0,40}[A-Za-z.]",
            tactic in "[a-z_][a-z_ \\[\\],0-9]{0,30}[a-z0-9\\]]",
        ) {
            let g = CompletionGrammar::default();
            let raw = g.render(Some(&thought), &tactic, Mode::ThoughtAugmented);
            let (th, t) = g.parse(&raw, Mode::ThoughtAugmented).unwrap();
            let th = th.unwrap();
            prop_assert_eq!(th.as_str(), thought.as_str());
            prop_assert_eq!(t.as_str(), tactic.as_str());
            let (th, t) = g.parse(&g.render(None, &tactic, Mode::Direct), Mode::Direct).unwrap();
            prop_assert!(th.is_none());
            prop_assert_eq!(t.as_str(), tactic.as_str());
        }
    }
}
