//! Orchestration engine for tactic-level neural theorem proving: proof
//! search against pluggable provers and generators, rationale annotation of
//! tactic corpora, and the expert-iteration loop that turns verified proofs
//! into fine-tuning data.

pub mod model;
pub mod prover;
pub mod generator;
pub mod util;
pub mod search;
pub mod annotate;
pub mod star;
pub mod eval;
pub mod config;
pub mod store;
