//! In-process string-rewriting prover.
//!
//! A state is a string, a tactic names a rule, and applying rule `lhs -> rhs`
//! rewrites the leftmost occurrence of `lhs`. The proof is finished when the
//! string is empty.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use super::{fresh_session_id, EnvError, EnvFactory, ProverEnv, TacticOutcome};
use crate::model::{ProofState, SessionId, Tactic, Theorem};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    pub name: String,
    pub lhs: String,
    pub rhs: String,
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("line {line}: expected `name: lhs -> rhs`")]
    Syntax { line: usize },
    #[error("line {line}: empty left-hand side")]
    EmptyLhs { line: usize },
    #[error("duplicate rule name {0:?}")]
    Duplicate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    rules: Vec<RewriteRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<RewriteRule>) -> Result<Self, RuleError> {
        let mut names = HashSet::new();
        for r in &rules {
            if r.lhs.is_empty() {
                return Err(RuleError::EmptyLhs { line: 0 });
            }
            if !names.insert(r.name.as_str()) {
                return Err(RuleError::Duplicate(r.name.clone()));
            }
        }
        Ok(Self { rules })
    }

    /// Parses `name: lhs -> rhs` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, body) = line.split_once(':').ok_or(RuleError::Syntax { line: i + 1 })?;
            let (lhs, rhs) = body.split_once("->").ok_or(RuleError::Syntax { line: i + 1 })?;
            let name = name.trim();
            if name.is_empty() {
                return Err(RuleError::Syntax { line: i + 1 });
            }
            let lhs = lhs.trim();
            if lhs.is_empty() {
                return Err(RuleError::EmptyLhs { line: i + 1 });
            }
            rules.push(RewriteRule {
                name: name.to_string(),
                lhs: lhs.to_string(),
                rhs: rhs.trim().to_string(),
            });
        }
        Self::new(rules)
    }

    pub fn load(path: &Path) -> Result<Self, RuleError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.rules
            .iter()
            .map(|r| format!("{}: {} -> {}\n", r.name, r.lhs, r.rhs))
            .collect()
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&RewriteRule> {
        self.rules.iter().find(|r| r.name == name)
    }

    /// Rewrites the leftmost occurrence of the rule's lhs, if any.
    pub fn rewrite(&self, state: &str, name: &str) -> Result<String, &'static str> {
        let rule = self.get(name).ok_or("unknown rule")?;
        let at = state.find(&rule.lhs).ok_or("rule not applicable")?;
        let mut out = String::with_capacity(state.len() + rule.rhs.len());
        out.push_str(&state[..at]);
        out.push_str(&rule.rhs);
        out.push_str(&state[at + rule.lhs.len()..]);
        Ok(out)
    }

    pub fn applicable<'a>(&'a self, state: &'a str) -> impl Iterator<Item = &'a RewriteRule> + 'a {
        self.rules.iter().filter(move |r| state.contains(r.lhs.as_str()))
    }

    /// Shortest rule sequence emptying `state`, by breadth-first search over
    /// at most `max_states` distinct strings.
    pub fn shortest_proof(&self, state: &str, max_states: usize) -> Option<Vec<String>> {
        if state.is_empty() {
            return Some(Vec::new());
        }
        let mut parent: HashMap<String, Option<(String, String)>> = HashMap::new();
        parent.insert(state.to_string(), None);
        let mut queue = std::collections::VecDeque::from([state.to_string()]);
        while let Some(cur) = queue.pop_front() {
            for rule in self.applicable(&cur) {
                let next = self.rewrite(&cur, &rule.name).expect("applicable");
                if parent.contains_key(&next) {
                    continue;
                }
                parent.insert(next.clone(), Some((cur.clone(), rule.name.clone())));
                if next.is_empty() {
                    let mut path = Vec::new();
                    let mut at = next;
                    while let Some(Some((prev, name))) = parent.get(&at) {
                        path.push(name.clone());
                        at = prev.clone();
                    }
                    path.reverse();
                    return Some(path);
                }
                if parent.len() >= max_states {
                    return None;
                }
                queue.push_back(next);
            }
        }
        None
    }
}

/// One toy-prover session.
#[derive(Debug)]
pub struct ToyProver {
    rules: Arc<RuleSet>,
    session: SessionId,
    next_id: u64,
    states: HashMap<u64, String>,
}

impl ToyProver {
    pub fn new(rules: Arc<RuleSet>) -> Self {
        Self {
            rules,
            session: fresh_session_id(),
            next_id: 0,
            states: HashMap::new(),
        }
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    fn state(&mut self, goals: String) -> ProofState {
        let id = self.next_id;
        self.next_id += 1;
        self.states.insert(id, goals.clone());
        ProofState {
            n_goals: u32::from(!goals.is_empty()),
            goals_text: goals,
            state_id: id,
            session: self.session,
        }
    }
}

impl ProverEnv for ToyProver {
    fn init_theorem(&mut self, theorem: &Theorem) -> Result<ProofState, EnvError> {
        if theorem.statement.is_empty() {
            return Err(EnvError::BadTheorem(format!("{}: empty statement", theorem.id)));
        }
        self.states.clear();
        self.next_id = 0;
        Ok(self.state(theorem.statement.clone()))
    }

    fn apply_tactic(&mut self, state: &ProofState, tactic: &Tactic, _timeout_ms: u64) -> Result<TacticOutcome, EnvError> {
        if state.session != self.session {
            return Err(EnvError::ForeignState {
                state_id: state.state_id,
                owner: state.session,
                session: self.session,
            });
        }
        let goals = match self.states.get(&state.state_id) {
            Some(g) if *g == state.goals_text => g.clone(),
            _ => return Err(EnvError::UnknownState(state.state_id)),
        };
        match self.rules.rewrite(&goals, tactic.as_str().trim()) {
            Err(msg) => Ok(TacticOutcome::TacticError(msg.to_string())),
            Ok(next) if next.is_empty() => Ok(TacticOutcome::ProofFinished),
            Ok(next) => Ok(TacticOutcome::NewState(self.state(next))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyFactory {
    rules: Arc<RuleSet>,
}

impl ToyFactory {
    pub fn new(rules: RuleSet) -> Self {
        Self { rules: Arc::new(rules) }
    }

    pub fn rules(&self) -> &Arc<RuleSet> {
        &self.rules
    }

    pub fn session(&self) -> ToyProver {
        ToyProver::new(self.rules.clone())
    }
}

impl EnvFactory for ToyFactory {
    fn open(&self) -> Result<Box<dyn ProverEnv>, EnvError> {
        Ok(Box::new(self.session()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prover::replay;
    use proptest::prelude::*;

    fn rules() -> Arc<RuleSet> {
        Arc::new(RuleSet::parse("# cancel pairs\nr1: ab -> \nr2: ba ->\n").unwrap())
    }

    fn t(s: &str) -> Tactic {
        Tactic::new(s).unwrap()
    }

    #[test]
    fn parses_rule_file() {
        let rs = RuleSet::parse("a: x -> y # note\n\n  b : yy->  \n").unwrap();
        assert_eq!(rs.rules().len(), 2);
        assert_eq!(rs.get("b").unwrap().lhs, "yy");
        assert_eq!(rs.get("b").unwrap().rhs, "");
        assert!(matches!(RuleSet::parse("x: -> y"), Err(RuleError::EmptyLhs { line: 1 })));
        assert!(matches!(RuleSet::parse("nonsense"), Err(RuleError::Syntax { line: 1 })));
        assert!(matches!(RuleSet::parse("a: x -> y\na: z -> w"), Err(RuleError::Duplicate(_))));
        assert_eq!(RuleSet::parse(&rs.to_text()).unwrap(), rs);
    }

    #[test]
    fn init_and_apply() {
        let mut env = ToyProver::new(rules());
        let root = env.init_theorem(&Theorem::new("t", "aabb")).unwrap();
        assert_eq!((root.goals_text.as_str(), root.state_id, root.n_goals), ("aabb", 0, 1));

        let TacticOutcome::NewState(s1) = env.apply_tactic(&root, &t("r1"), 0).unwrap() else {
            panic!("expected new state")
        };
        assert_eq!(s1.goals_text, "ab");
        assert_ne!(s1.state_id, root.state_id);
        assert_eq!(env.apply_tactic(&s1, &t("r1"), 0).unwrap(), TacticOutcome::ProofFinished);
        assert_eq!(
            env.apply_tactic(&root, &t("r2"), 0).unwrap(),
            TacticOutcome::TacticError("rule not applicable".into())
        );
        assert_eq!(
            env.apply_tactic(&root, &t("r9"), 0).unwrap(),
            TacticOutcome::TacticError("unknown rule".into())
        );
    }

    #[test]
    fn empty_statement_is_bad_theorem() {
        let mut env = ToyProver::new(rules());
        assert!(matches!(env.init_theorem(&Theorem::new("t", "")), Err(EnvError::BadTheorem(_))));
    }

    #[test]
    fn replay_examples() {
        let mut env = ToyProver::new(rules());
        let th = Theorem::new("t", "aabb");
        assert!(replay(&mut env, &th, &[t("r1"), t("r1")], 0).unwrap());
        assert!(!replay(&mut env, &th, &[t("r1")], 0).unwrap());
        assert!(!replay(&mut env, &th, &[t("r2"), t("r1")], 0).unwrap());
        assert!(!replay(&mut env, &th, &[t("r1"), t("r1"), t("r1")], 0).unwrap());
    }

    #[test]
    fn sessions_are_isolated() {
        let mut a = ToyProver::new(rules());
        let mut b = ToyProver::new(rules());
        let th = Theorem::new("t", "aabb");
        let sa = a.init_theorem(&th).unwrap();
        b.init_theorem(&th).unwrap();
        assert!(matches!(b.apply_tactic(&sa, &t("r1"), 0), Err(EnvError::ForeignState { .. })));
        let mut forged = sa.clone();
        forged.state_id = 42;
        assert!(matches!(a.apply_tactic(&forged, &t("r1"), 0), Err(EnvError::UnknownState(42))));
    }

    #[test]
    fn shortest_proof_finds_depth_two() {
        assert_eq!(rules().shortest_proof("aabb", 1000), Some(vec!["r1".into(), "r1".into()]));
        assert_eq!(rules().shortest_proof("aa", 1000), None);
    }

    /// Brute-force scan for the leftmost match, independent of `str::find`.
    fn leftmost_scan(state: &[u8], lhs: &[u8]) -> Option<usize> {
        (0..=state.len().saturating_sub(lhs.len()))
            .find(|&i| state.len() >= lhs.len() && (0..lhs.len()).all(|j| state[i + j] == lhs[j]))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn leftmost_rewrite_law(
            rule_specs in proptest::collection::vec(("[abc]{1,3}", "[abc]{0,2}"), 1..5),
            state in "[abc]{1,12}",
            pick in 0usize..5,
        ) {
            let rules: Vec<RewriteRule> = rule_specs.iter().enumerate()
                .map(|(i, (l, r))| RewriteRule { name: format!("r{i}"), lhs: l.clone(), rhs: r.clone() })
                .collect();
            let rs = Arc::new(RuleSet::new(rules.clone()).unwrap());
            let rule = &rules[pick % rules.len()];
            let mut env = ToyProver::new(rs.clone());
            let root = env.init_theorem(&Theorem::new("p", state.clone())).unwrap();
            let outcome = env.apply_tactic(&root, &t(&rule.name), 0).unwrap();
            let expected = leftmost_scan(state.as_bytes(), rule.lhs.as_bytes()).map(|i| {
                format!("{}{}{}", &state[..i], rule.rhs, &state[i + rule.lhs.len()..])
            });
            match (expected, outcome) {
                (None, TacticOutcome::TacticError(m)) => prop_assert_eq!(m, "rule not applicable"),
                (Some(e), TacticOutcome::ProofFinished) => prop_assert!(e.is_empty()),
                (Some(e), TacticOutcome::NewState(s)) => { prop_assert_eq!(s.goals_text, e); prop_assert_eq!(s.n_goals, 1); }
                (e, o) => prop_assert!(false, "expected {:?}, got {:?}", e, o),
            }
            // Determinism: same state and tactic, same outcome.
            let again = env.apply_tactic(&root, &t(&rule.name), 0).unwrap();
            let mut env2 = ToyProver::new(rs);
            let root2 = env2.init_theorem(&Theorem::new("p", state)).unwrap();
            let other = env2.apply_tactic(&root2, &t(&rule.name), 0).unwrap();
            let strip = |o: TacticOutcome| match o { TacticOutcome::NewState(s) => TacticOutcome::NewState(ProofState { state_id: 0, session: 0, ..s }), o => o };
            prop_assert_eq!(strip(again), strip(other));
        }
    }
}
