//! Mock generator with fixed per-state tactic distributions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{sample_index, CompletionGrammar, GenError, GenRequest, GenRng, Generator, Mode, SampleResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub tactic: String,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
}

impl ScriptEntry {
    pub fn new(tactic: impl Into<String>, p: f64) -> Self {
        Self {
            tactic: tactic.into(),
            p,
            thought: None,
        }
    }
}

/// Samples from `per_state[state]`, falling back to `default`. Reported
/// log-probabilities are `ln p` of the untempered, normalized table.
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    default: Vec<ScriptEntry>,
    per_state: HashMap<String, Vec<ScriptEntry>>,
    grammar: CompletionGrammar,
}

fn normalized(mut entries: Vec<ScriptEntry>) -> Result<Vec<ScriptEntry>, GenError> {
    let total: f64 = entries.iter().map(|e| e.p).sum();
    if entries.iter().any(|e| !(e.p > 0.0) || !e.p.is_finite()) || !(total > 0.0) {
        return Err(GenError::InvalidRequest("script probabilities must be positive".into()));
    }
    for e in &mut entries {
        e.p /= total;
    }
    Ok(entries)
}

impl ScriptedGenerator {
    pub fn new(default: Vec<ScriptEntry>) -> Result<Self, GenError> {
        Ok(Self {
            default: normalized(default)?,
            per_state: HashMap::new(),
            grammar: CompletionGrammar::default(),
        })
    }

    /// A generator that always proposes `tactic` with probability 1.
    pub fn constant(tactic: &str) -> Self {
        Self::new(vec![ScriptEntry::new(tactic, 1.0)]).expect("p = 1 is valid")
    }

    pub fn with_state(mut self, state: impl Into<String>, entries: Vec<ScriptEntry>) -> Result<Self, GenError> {
        self.per_state.insert(state.into(), normalized(entries)?);
        Ok(self)
    }

    pub fn with_grammar(mut self, grammar: CompletionGrammar) -> Self {
        self.grammar = grammar;
        self
    }

    fn table(&self, state: &str) -> &[ScriptEntry] {
        self.per_state.get(state).map(Vec::as_slice).unwrap_or(&self.default)
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, req: &GenRequest, rng: &mut GenRng) -> Result<Vec<SampleResult>, GenError> {
        let table = self.table(&req.state_text);
        if table.is_empty() {
            return Ok(Vec::new());
        }
        let probs: Vec<f64> = table.iter().map(|e| e.p).collect();
        let temperature = req.effective_temperature();
        Ok((0..req.n)
            .map(|_| {
                let e = &table[sample_index(&probs, temperature, rng)];
                let thought = match req.mode {
                    Mode::ThoughtAugmented => Some(e.thought.clone().unwrap_or_else(|| format!("Apply {} next.", e.tactic))),
                    Mode::Direct => None,
                };
                let raw = self.grammar.render(thought.as_deref(), &e.tactic, req.mode);
                self.grammar.sample_from(raw, req.mode, e.p.ln())
            })
            .collect())
    }

    fn describe(&self) -> String {
        format!("scripted({} default entries, {} states)", self.default.len(), self.per_state.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn argmax_at_zero_temperature() {
        let g = ScriptedGenerator::new(vec![ScriptEntry::new("r1", 0.8), ScriptEntry::new("r2", 0.2)]).unwrap();
        let mut rng = GenRng::seed_from_u64(0);
        let out = g.generate(&GenRequest::new("aabb", 1, 0.0), &mut rng).unwrap();
        assert_eq!(out.len(), 1);
        let s = out[0].as_ref().unwrap();
        assert_eq!(s.tactic.as_str(), "r1");
        assert!((s.avg_logprob - (-0.2231435513142097)).abs() < 1e-9);
        assert!((s.avg_logprob - 0.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logprob_matches_sampled_entry() {
        let g = ScriptedGenerator::new(vec![ScriptEntry::new("a", 3.0), ScriptEntry::new("b", 1.0)])
            .unwrap()
            .with_state("x", vec![ScriptEntry::new("c", 1.0)])
            .unwrap();
        let mut rng = GenRng::seed_from_u64(3);
        for s in g.generate(&GenRequest::new("y", 200, 1.0), &mut rng).unwrap() {
            let s = s.unwrap();
            let p = if s.tactic.as_str() == "a" { 0.75 } else { 0.25 };
            assert!((s.avg_logprob - f64::ln(p)).abs() < 1e-9);
        }
        let s = g.generate(&GenRequest::new("x", 1, 1.0), &mut rng).unwrap().remove(0).unwrap();
        assert_eq!((s.tactic.as_str(), s.avg_logprob), ("c", 0.0));
    }

    #[test]
    fn thought_mode_round_trips_through_grammar() {
        let g = ScriptedGenerator::constant("r1");
        let mut rng = GenRng::seed_from_u64(0);
        let req = GenRequest::new("ab", 1, 0.0).with_mode(Mode::ThoughtAugmented);
        let s = g.generate(&req, &mut rng).unwrap().remove(0).unwrap();
        assert!(s.raw_text.contains("### Tactic"));
        assert_eq!(s.thought.unwrap().as_str(), "Apply r1 next.");
        assert_eq!(s.tactic.as_str(), "r1");
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(ScriptedGenerator::new(vec![ScriptEntry::new("a", 0.0)]).is_err());
        assert!(ScriptedGenerator::new(vec![ScriptEntry::new("a", f64::NAN)]).is_err());
    }
}
