//! Serves the toy rewriting prover over the JSON-lines bridge protocol on
//! stdin/stdout.
//!
//! Usage: `toy-bridge <rules-file>`

use std::io::{self, BufWriter};
use std::process::ExitCode;
use std::sync::Arc;

use proofstar::prover::{serve_bridge, RuleSet};

fn main() -> ExitCode {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: toy-bridge <rules-file>");
        return ExitCode::from(2);
    };
    let rules = match RuleSet::load(path.as_ref()) {
        Ok(r) => Arc::new(r),
        Err(e) => {
            eprintln!("toy-bridge: {path}: {e}");
            return ExitCode::from(2);
        }
    };
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    match serve_bridge(rules, stdin, stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("toy-bridge: {e}");
            ExitCode::FAILURE
        }
    }
}
