//! Temporal structural causal explanations: context-dependent weighted
//! temporal causal graphs, recursive explanation trees with linguistic
//! cause/effect indicators, tree post-processing, verbalization, causal
//! discovery from rollouts, and two synthetic data generators (a structural
//! health panel and a grid game).

pub mod coinrunner;
pub mod data;
pub mod discovery;
pub mod engine;
pub mod error;
pub mod graph;
pub mod predicate;
pub mod rules;
pub mod tree;
pub mod treeops;
pub mod verbalize;

pub use error::{Result, TsceError};
