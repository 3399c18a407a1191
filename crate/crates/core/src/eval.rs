//! Evaluation runs and reporting: pass-rate rows, splits by source and
//! level, and budget-scaling curves over attempt logs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::Generator;
use crate::model::{read_trajectories, write_trajectories, ModelError, Theorem, Trajectory};
use crate::prover::EnvFactory;
use crate::search::{search_all, Method, SearchConfig, SearchError, SearchResult};

pub const KNOWN_SOURCES: [&str; 5] = ["IMO", "AIME", "AMC", "MATH", "CUSTOM"];
pub const UNCATEGORIZED: &str = "uncategorized";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("problem set is empty")]
    EmptyProblemSet,
    #[error("{theorem_id} has {have} attempts, need {need}")]
    InsufficientAttempts { theorem_id: String, have: usize, need: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("log mentions unknown problem {0}")]
    UnknownProblem(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Budget and identity fields that head every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalHeader {
    pub approach: String,
    pub decoding: Method,
    pub n: u32,
    pub k: u32,
    pub s: u32,
    pub temperature: f64,
    pub seed: u64,
}

impl EvalHeader {
    pub fn new(approach: impl Into<String>, decoding: Method, cfg: &SearchConfig) -> Self {
        Self {
            approach: approach.into(),
            decoding,
            n: cfg.budget.n,
            k: cfg.budget.k,
            s: cfg.budget.s,
            temperature: cfg.budget.temperature,
            seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCell {
    pub source: String,
    pub level: String,
    pub solved: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    #[serde(flatten)]
    pub header: EvalHeader,
    pub pass_rate: f64,
    pub solved: usize,
    pub total: usize,
    pub splits: Vec<SplitCell>,
}

/// All attempts per problem, in problem order then attempt order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttemptLog {
    pub problems: Vec<(String, Vec<Trajectory>)>,
}

impl AttemptLog {
    pub fn from_results(results: &[SearchResult]) -> Self {
        Self {
            problems: results.iter().map(|r| (r.theorem_id.clone(), r.attempts.clone())).collect(),
        }
    }

    /// Groups trajectories by theorem id in order of first appearance.
    pub fn from_trajectories(trajectories: Vec<Trajectory>) -> Self {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut problems: Vec<(String, Vec<Trajectory>)> = Vec::new();
        for t in trajectories {
            let slot = *index.entry(t.theorem_id.clone()).or_insert_with(|| {
                problems.push((t.theorem_id.clone(), Vec::new()));
                problems.len() - 1
            });
            problems[slot].1.push(t);
        }
        Self { problems }
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = BufWriter::new(File::create(path)?);
        for (_, attempts) in &self.problems {
            write_trajectories(&mut w, attempts)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        Ok(Self::from_trajectories(read_trajectories(path)?))
    }

    fn solved_ids(&self, k: Option<usize>) -> HashMap<&str, bool> {
        self.problems
            .iter()
            .map(|(id, attempts)| {
                let prefix = &attempts[..k.unwrap_or(attempts.len()).min(attempts.len())];
                (id.as_str(), prefix.iter().any(|t| t.success))
            })
            .collect()
    }
}

/// (source, level) cell for a problem. Sources are matched on the part
/// before the first '/', so "MATH/Algebra" lands under MATH's scheme but
/// keeps its full name.
pub fn split_key(theorem: &Theorem) -> (String, String) {
    match &theorem.source {
        Some(src) if KNOWN_SOURCES.contains(&src.split('/').next().unwrap_or("")) => {
            (src.clone(), theorem.level.clone().unwrap_or_default())
        }
        _ => (UNCATEGORIZED.to_string(), String::new()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub cells: Vec<SplitCell>,
    pub solved: usize,
    pub total: usize,
}

/// Counts solved problems per (source, level). Problems absent from the log
/// count as unsolved.
pub fn breakdown(problems: &[Theorem], log: &AttemptLog) -> Result<Breakdown, EvalError> {
    let solved = log.solved_ids(None);
    if let Some(id) = solved.keys().find(|id| !problems.iter().any(|p| p.id == **id)) {
        return Err(EvalError::UnknownProblem(id.to_string()));
    }
    let mut cells: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for p in problems {
        let cell = cells.entry(split_key(p)).or_default();
        cell.1 += 1;
        if solved.get(p.id.as_str()).copied().unwrap_or(false) {
            cell.0 += 1;
        }
    }
    let cells: Vec<SplitCell> = cells
        .into_iter()
        .map(|((source, level), (solved, total))| SplitCell {
            source,
            level,
            solved,
            total,
        })
        .collect();
    Ok(Breakdown {
        solved: cells.iter().map(|c| c.solved).sum(),
        total: problems.len(),
        cells,
    })
}

impl Breakdown {
    pub fn render_text(&self) -> String {
        let mut rows: Vec<[String; 3]> = vec![["source".into(), "level".into(), "solved".into()]];
        for c in &self.cells {
            rows.push([c.source.clone(), c.level.clone(), format!("{}/{}", c.solved, c.total)]);
        }
        rows.push(["total".into(), String::new(), format!("{}/{}", self.solved, self.total)]);
        render_aligned(&rows)
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("source,level,solved,total\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{}", csv_field(&c.source), csv_field(&c.level), c.solved, c.total);
        }
        let _ = writeln!(out, "total,,{},{}", self.solved, self.total);
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_aligned<const W: usize>(rows: &[[String; W]]) -> String {
    let mut widths = [0usize; W];
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .zip(widths)
            .map(|(cell, w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Builds a row from an attempt log; used both after a live run and when
/// re-rendering a saved log.
pub fn row_from_log(header: EvalHeader, problems: &[Theorem], log: &AttemptLog) -> Result<EvalRow, EvalError> {
    if problems.is_empty() {
        return Err(EvalError::EmptyProblemSet);
    }
    let b = breakdown(problems, log)?;
    Ok(EvalRow {
        header,
        pass_rate: b.solved as f64 / b.total as f64,
        solved: b.solved,
        total: b.total,
        splits: b.cells,
    })
}

/// Runs the chosen search over every problem. Per-problem faults are logged
/// and count as unsolved.
pub fn run_eval(
    problems: &[Theorem],
    env: &dyn EnvFactory,
    gen: &dyn Generator,
    cfg: &SearchConfig,
    decoding: Method,
    approach: &str,
) -> Result<(EvalRow, AttemptLog), EvalError> {
    if problems.is_empty() {
        return Err(EvalError::EmptyProblemSet);
    }
    let results = search_all(decoding, problems, env, gen, cfg)?;
    for r in results.iter().filter(|r| !r.errors.is_empty()) {
        log::warn!("{}: {} errors, first: {}", r.theorem_id, r.errors.len(), r.errors[0]);
    }
    let log = AttemptLog::from_results(&results);
    let row = row_from_log(EvalHeader::new(approach, decoding, cfg), problems, &log)?;
    Ok((row, log))
}

/// pass@k on attempt prefixes for each k.
pub fn scaling_curve(log: &AttemptLog, ks: &[u32]) -> Result<Vec<(u32, f64)>, EvalError> {
    if log.problems.is_empty() {
        return Err(EvalError::EmptyProblemSet);
    }
    let need = ks.iter().copied().max().unwrap_or(0) as usize;
    if ks.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    if let Some((id, a)) = log.problems.iter().find(|(_, a)| a.len() < need) {
        return Err(EvalError::InsufficientAttempts {
            theorem_id: id.clone(),
            have: a.len(),
            need,
        });
    }
    let first_success: Vec<Option<usize>> = log
        .problems
        .iter()
        .map(|(_, a)| a.iter().position(|t| t.success))
        .collect();
    let total = first_success.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let solved = first_success.iter().filter(|f| f.is_some_and(|i| i < k as usize)).count();
            (k, solved as f64 / total)
        })
        .collect())
}

pub fn render_rows(rows: &[EvalRow]) -> String {
    let mut table: Vec<[String; 8]> = vec![[
        "approach".into(),
        "decoding".into(),
        "N".into(),
        "K".into(),
        "S".into(),
        "T".into(),
        "solved".into(),
        "pass".into(),
    ]];
    for r in rows {
        let h = &r.header;
        table.push([
            h.approach.clone(),
            h.decoding.as_str().into(),
            h.n.to_string(),
            h.k.to_string(),
            h.s.to_string(),
            h.temperature.to_string(),
            format!("{}/{}", r.solved, r.total),
            format!("{:.1}%", 100.0 * r.pass_rate),
        ]);
    }
    render_aligned(&table)
}

pub fn render_rows_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("approach,decoding,N,K,S,T,solved,total,pass_rate\n");
    for r in rows {
        let h = &r.header;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(&h.approach),
            h.decoding.as_str(),
            h.n,
            h.k,
            h.s,
            h.temperature,
            r.solved,
            r.total,
            r.pass_rate
        );
    }
    out
}

pub fn render_curve(curve: &[(u32, f64)]) -> String {
    let mut table: Vec<[String; 2]> = vec![["k".into(), "pass@k".into()]];
    table.extend(curve.iter().map(|(k, p)| [k.to_string(), format!("{:.1}%", 100.0 * p)]));
    render_aligned(&table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::ToySolverGenerator;
    use crate::model::SearchBudget;
    use crate::prover::{RuleSet, ToyFactory};
    use crate::search::Clock;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn attempt(id: &str, success: bool) -> Trajectory {
        Trajectory {
            theorem_id: id.into(),
            steps: Vec::new(),
            success,
            generator_calls: 1,
            wall_ms: 0,
        }
    }

    fn planted(outcomes: &[Vec<bool>]) -> AttemptLog {
        AttemptLog {
            problems: outcomes
                .iter()
                .enumerate()
                .map(|(i, a)| (format!("p{i}"), a.iter().map(|&s| attempt(&format!("p{i}"), s)).collect()))
                .collect(),
        }
    }

    #[test]
    fn prefix_counting() {
        let log = planted(&[vec![false, false, true, false], vec![true, false, false, false]]);
        let c = scaling_curve(&log, &[1, 2, 4]).unwrap();
        assert_eq!(c, vec![(1, 0.5), (2, 0.5), (4, 1.0)]);
        assert!(matches!(
            scaling_curve(&log, &[8]),
            Err(EvalError::InsufficientAttempts { need: 8, have: 4, .. })
        ));
    }

    #[test]
    fn planted_cell_count() {
        let problems: Vec<Theorem> = (0..14)
            .map(|i| Theorem::new(format!("p{i}"), "ab").with_metadata("MATH/Algebra", "Level 5"))
            .collect();
        let outcomes: Vec<Vec<bool>> = (0..14).map(|i| vec![i < 2]).collect();
        let b = breakdown(&problems, &planted(&outcomes)).unwrap();
        assert_eq!(b.cells.len(), 1);
        assert_eq!((b.cells[0].solved, b.cells[0].total), (2, 14));
        assert!(b.render_text().contains("MATH/Algebra  Level 5  2/14"));
        assert!(b.render_csv().contains("MATH/Algebra,Level 5,2,14\n"));
    }

    #[test]
    fn unknown_metadata_is_uncategorized() {
        let problems = vec![
            Theorem::new("p0", "ab"),
            Theorem::new("p1", "ab").with_metadata("Putnam", "hard"),
        ];
        let b = breakdown(&problems, &planted(&[vec![true], vec![false]])).unwrap();
        assert_eq!(b.cells.len(), 1);
        assert_eq!(b.cells[0].source, UNCATEGORIZED);
        assert_eq!((b.cells[0].solved, b.cells[0].total), (1, 2));
    }

    fn fixture() -> (Vec<Theorem>, ToyFactory, Arc<RuleSet>) {
        let rules = RuleSet::parse("r1: ab ->\nr2: ba ->\nr3: aa -> b").unwrap();
        let problems = vec![
            Theorem::new("a", "aabb").with_metadata("MATH/Algebra", "Level 1"),
            Theorem::new("b", "abba").with_metadata("AMC", "12"),
            Theorem::new("c", "bbb").with_metadata("AMC", "12"),
        ];
        (problems, ToyFactory::new(rules.clone()), Arc::new(rules))
    }

    fn cfg() -> SearchConfig {
        let mut c = SearchConfig::new(SearchBudget {
            n: 10,
            k: 1,
            s: 1,
            temperature: 0.7,
            per_problem_timeout_ms: 0,
            max_proofs_per_problem: 3,
        });
        c.clock = Clock::Logical { ms_per_call: 0 };
        c
    }

    #[test]
    fn eval_then_replay_from_saved_log() {
        let (problems, env, rules) = fixture();
        let gen = ToySolverGenerator::new(rules);
        let (row, log) = run_eval(&problems, &env, &gen, &cfg(), Method::Sampling, "toy").unwrap();
        assert_eq!((row.solved, row.total), (2, 3));
        assert_eq!((row.header.n, row.header.k, row.header.s, row.header.temperature), (10, 1, 1, 0.7));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        log.write(&path).unwrap();
        let again = row_from_log(row.header.clone(), &problems, &AttemptLog::read(&path).unwrap()).unwrap();
        assert_eq!(again, row);
        assert!(render_rows(&[row]).contains("sampling"));
    }

    #[test]
    fn empty_problem_set() {
        let (_, env, rules) = fixture();
        let gen = ToySolverGenerator::new(rules);
        assert!(matches!(
            run_eval(&[], &env, &gen, &cfg(), Method::Sampling, "toy"),
            Err(EvalError::EmptyProblemSet)
        ));
    }

    proptest! {
        #[test]
        fn curve_is_monotone(outcomes in prop::collection::vec(prop::collection::vec(any::<bool>(), 16), 1..30)) {
            let log = planted(&outcomes);
            let ks: Vec<u32> = (1..=16).collect();
            let c = scaling_curve(&log, &ks).unwrap();
            for w in c.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            let full = outcomes.iter().filter(|a| a.iter().any(|&s| s)).count() as f64 / outcomes.len() as f64;
            prop_assert_eq!(c[15].1, full);
        }
    }
}
