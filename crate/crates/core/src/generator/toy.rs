//! Rule-aware generators for the toy prover.

use std::sync::Arc;

use super::{sample_index, CompletionGrammar, GenError, GenRequest, GenRng, Generator, SampleResult};
use crate::prover::RuleSet;

/// Proposes the first step of a shortest proof (log-prob 0). States without
/// a proof get the first applicable rule, or the first rule when none applies.
#[derive(Debug, Clone)]
pub struct ToySolverGenerator {
    rules: Arc<RuleSet>,
    max_states: usize,
    grammar: CompletionGrammar,
}

impl ToySolverGenerator {
    pub fn new(rules: Arc<RuleSet>) -> Self {
        Self {
            rules,
            max_states: 100_000,
            grammar: CompletionGrammar::default(),
        }
    }

    fn choose(&self, state: &str) -> Option<String> {
        if let Some(first) = self.rules.shortest_proof(state, self.max_states).and_then(|p| p.into_iter().next()) {
            return Some(first);
        }
        self.rules
            .applicable(state)
            .next()
            .or_else(|| self.rules.rules().first())
            .map(|r| r.name.clone())
    }
}

impl Generator for ToySolverGenerator {
    fn generate(&self, req: &GenRequest, _rng: &mut GenRng) -> Result<Vec<SampleResult>, GenError> {
        let Some(name) = self.choose(&req.state_text) else {
            return Ok(Vec::new());
        };
        let thought = format!("A shortest proof starts with {name}.");
        Ok((0..req.n)
            .map(|_| {
                let raw = self.grammar.render(Some(&thought), &name, req.mode);
                self.grammar.sample_from(raw, req.mode, 0.0)
            })
            .collect())
    }

    fn describe(&self) -> String {
        "toy-solver".into()
    }
}

/// Samples only among rules applicable to the state, weighted by fixed
/// per-rule weights. Never proposes an illegal tactic while some rule
/// applies; at temperature 0 it is deterministic.
#[derive(Debug, Clone)]
pub struct GreedyToyGenerator {
    rules: Arc<RuleSet>,
    weights: Vec<f64>,
    grammar: CompletionGrammar,
}

impl GreedyToyGenerator {
    pub fn new(rules: Arc<RuleSet>, weights: Vec<f64>) -> Result<Self, GenError> {
        if weights.len() != rules.rules().len() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(GenError::InvalidRequest("one positive weight per rule required".into()));
        }
        Ok(Self {
            rules,
            weights,
            grammar: CompletionGrammar::default(),
        })
    }
}

impl Generator for GreedyToyGenerator {
    fn generate(&self, req: &GenRequest, rng: &mut GenRng) -> Result<Vec<SampleResult>, GenError> {
        let candidates: Vec<usize> = (0..self.rules.rules().len())
            .filter(|&i| req.state_text.contains(self.rules.rules()[i].lhs.as_str()))
            .collect();
        if candidates.is_empty() {
            let Some(first) = self.rules.rules().first() else {
                return Ok(Vec::new());
            };
            let raw = self.grammar.render(None, &first.name, req.mode);
            let lp = (self.weights[0] / self.weights.iter().sum::<f64>()).ln();
            return Ok((0..req.n).map(|_| self.grammar.sample_from(raw.clone(), req.mode, lp)).collect());
        }
        let total: f64 = candidates.iter().map(|&i| self.weights[i]).sum();
        let probs: Vec<f64> = candidates.iter().map(|&i| self.weights[i] / total).collect();
        let temperature = req.effective_temperature();
        Ok((0..req.n)
            .map(|_| {
                let j = sample_index(&probs, temperature, rng);
                let name = &self.rules.rules()[candidates[j]].name;
                let thought = format!("Rule {name} applies here.");
                let raw = self.grammar.render(Some(&thought), name, req.mode);
                self.grammar.sample_from(raw, req.mode, probs[j].ln())
            })
            .collect())
    }

    fn describe(&self) -> String {
        format!("greedy-toy({:?})", self.weights)
    }
}
