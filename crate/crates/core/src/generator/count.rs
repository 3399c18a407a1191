//! Count-based trainable policy over toy-prover rule names.
//!
//! States are reduced to a feature key (how often each rule's left-hand side
//! occurs in the string) and the policy is the add-one-smoothed frequency of
//! tactics seen for that key. Fitting it stands in for fine-tuning in
//! desk-scale expert-iteration runs.

use std::collections::HashMap;
use std::sync::Arc;

use super::{sample_index, CompletionGrammar, GenError, GenRequest, GenRng, Generator, Mode, SampleResult};
use crate::model::TrainingExample;
use crate::prover::RuleSet;

/// Sorted `(lhs, occurrences)` pairs with nonzero counts; overlapping
/// occurrences are counted.
pub type FeatureKey = Vec<(String, usize)>;

pub fn feature_key(rules: &RuleSet, state: &str) -> FeatureKey {
    let mut key: FeatureKey = Vec::new();
    for rule in rules.rules() {
        if key.iter().any(|(l, _)| *l == rule.lhs) {
            continue;
        }
        let count = (0..state.len())
            .filter(|&i| state.is_char_boundary(i) && state[i..].starts_with(rule.lhs.as_str()))
            .count();
        if count > 0 {
            key.push((rule.lhs.clone(), count));
        }
    }
    key.sort();
    key
}

#[derive(Debug, Clone)]
pub struct CountPolicy {
    rules: Arc<RuleSet>,
    counts: HashMap<FeatureKey, Vec<u64>>,
    thoughts: HashMap<(FeatureKey, usize), String>,
    examples_seen: usize,
    grammar: CompletionGrammar,
}

impl CountPolicy {
    pub fn fit(dataset: &[TrainingExample], rules: Arc<RuleSet>) -> Result<Self, GenError> {
        if dataset.is_empty() {
            return Err(GenError::EmptyDataset);
        }
        let mut policy = Self {
            rules,
            counts: HashMap::new(),
            thoughts: HashMap::new(),
            examples_seen: 0,
            grammar: CompletionGrammar::default(),
        };
        policy.absorb(dataset);
        Ok(policy)
    }

    /// Adds more observations on top of the existing counts.
    pub fn absorb(&mut self, dataset: &[TrainingExample]) {
        let n_rules = self.rules.rules().len();
        for ex in dataset {
            let Some(idx) = self.rules.rules().iter().position(|r| r.name == ex.tactic_text.trim()) else {
                continue;
            };
            let key = feature_key(&self.rules, &ex.state_text);
            if let Some(t) = &ex.thought_text {
                self.thoughts.entry((key.clone(), idx)).or_insert_with(|| t.clone());
            }
            self.counts.entry(key).or_insert_with(|| vec![0; n_rules])[idx] += 1;
            self.examples_seen += 1;
        }
    }

    /// Probability of each rule (in rule-set order) given the state.
    pub fn distribution(&self, state: &str) -> Vec<f64> {
        let n_rules = self.rules.rules().len();
        let key = feature_key(&self.rules, state);
        match self.counts.get(&key) {
            Some(c) => {
                let denom = (c.iter().sum::<u64>() + n_rules as u64) as f64;
                c.iter().map(|&k| (k + 1) as f64 / denom).collect()
            }
            None => vec![1.0 / n_rules as f64; n_rules],
        }
    }

    pub fn probability(&self, state: &str, tactic: &str) -> f64 {
        self.rules
            .rules()
            .iter()
            .position(|r| r.name == tactic)
            .map_or(0.0, |i| self.distribution(state)[i])
    }

    pub fn examples_seen(&self) -> usize {
        self.examples_seen
    }

    pub fn rules(&self) -> &Arc<RuleSet> {
        &self.rules
    }
}

impl Generator for CountPolicy {
    fn generate(&self, req: &GenRequest, rng: &mut GenRng) -> Result<Vec<SampleResult>, GenError> {
        if self.rules.rules().is_empty() {
            return Ok(Vec::new());
        }
        let probs = self.distribution(&req.state_text);
        let key = feature_key(&self.rules, &req.state_text);
        let temperature = req.effective_temperature();
        Ok((0..req.n)
            .map(|_| {
                let idx = sample_index(&probs, temperature, rng);
                let name = &self.rules.rules()[idx].name;
                let thought = match req.mode {
                    Mode::ThoughtAugmented => Some(
                        self.thoughts
                            .get(&(key.clone(), idx))
                            .cloned()
                            .unwrap_or_else(|| format!("Rewrite with {name}.")),
                    ),
                    Mode::Direct => None,
                };
                let raw = self.grammar.render(thought.as_deref(), name, req.mode);
                self.grammar.sample_from(raw, req.mode, probs[idx].ln())
            })
            .collect())
    }

    fn describe(&self) -> String {
        format!("count-policy({} examples, {} keys)", self.examples_seen, self.counts.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Provenance;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rules() -> Arc<RuleSet> {
        Arc::new(RuleSet::parse("r1: ab ->\nr2: ba ->").unwrap())
    }

    fn ex(state: &str, tactic: &str) -> TrainingExample {
        TrainingExample::direct(state, tactic, Provenance::Sft)
    }

    #[test]
    fn add_one_smoothing() {
        let mut data = vec![ex("aabb", "r1"); 3];
        data.push(ex("aabb", "r2"));
        let p = CountPolicy::fit(&data, rules()).unwrap();
        assert!((p.probability("aabb", "r1") - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.probability("aabb", "r2") - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(CountPolicy::fit(&[], rules()), Err(GenError::EmptyDataset)));
    }

    #[test]
    fn unseen_state_is_uniform() {
        let p = CountPolicy::fit(&[ex("aabb", "r1")], rules()).unwrap();
        assert_eq!(p.distribution("bbaa"), vec![0.5, 0.5]);
    }

    #[test]
    fn feature_key_counts_overlaps() {
        let rs = RuleSet::parse("x: aa ->\ny: ab -> b\nz: aa -> c").unwrap();
        assert_eq!(feature_key(&rs, "aaab"), vec![("aa".to_string(), 2), ("ab".to_string(), 1)]);
        assert!(feature_key(&rs, "bbb").is_empty());
    }

    #[test]
    fn states_sharing_a_key_share_counts() {
        let p = CountPolicy::fit(&[ex("aabb", "r1")], rules()).unwrap();
        // "aabb" and "aabbb" both contain exactly one "ab" and no "ba".
        assert_eq!(p.distribution("aabb"), p.distribution("aabbb"));
    }

    #[test]
    fn zero_temperature_is_deterministic_argmax() {
        let p = CountPolicy::fit(&[ex("aabb", "r2"), ex("aabb", "r2")], rules()).unwrap();
        for seed in 0..20 {
            let mut rng = GenRng::seed_from_u64(seed);
            let s = p.generate(&GenRequest::new("aabb", 1, 0.0), &mut rng).unwrap().remove(0).unwrap();
            assert_eq!(s.tactic.as_str(), "r2");
            assert!((s.avg_logprob - (3.0f64 / 4.0).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn absorb_accumulates() {
        let mut p = CountPolicy::fit(&[ex("aabb", "r1")], rules()).unwrap();
        p.absorb(&[ex("aabb", "r1"), ex("aabb", "unknown")]);
        assert_eq!(p.examples_seen(), 2);
        assert!((p.probability("aabb", "r1") - 3.0 / 4.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn distributions_normalize_and_logprobs_match(
            pairs in proptest::collection::vec(("[ab]{1,6}", 0usize..3), 1..40),
            probe in "[ab]{1,6}",
            t in 0.0f64..2.0,
            seed in any::<u64>(),
        ) {
            let rs = Arc::new(RuleSet::parse("r1: ab ->\nr2: ba ->\nr3: aa -> a").unwrap());
            let data: Vec<_> = pairs.iter().map(|(s, i)| ex(s, &format!("r{}", i + 1))).collect();
            let p = CountPolicy::fit(&data, rs).unwrap();
            for (s, _) in &pairs {
                prop_assert!((p.distribution(s).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let mut rng = GenRng::seed_from_u64(seed);
            for sample in p.generate(&GenRequest::new(probe.clone(), 5, t), &mut rng).unwrap() {
                let sample = sample.unwrap();
                let expected = p.probability(&probe, sample.tactic.as_str()).ln();
                prop_assert!((sample.avg_logprob - expected).abs() < 1e-9);
            }
        }
    }
}
