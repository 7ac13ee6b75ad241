//! Hierarchical neural architecture search spaces built from weighted
//! context-free grammars, plus Bayesian optimization over them with a
//! hierarchical Weisfeiler-Lehman graph kernel.
//!
//! The pipeline: [`grammar`] parses and samples derivations, [`term`] holds
//! them as annotated trees, [`assembly`] turns them into labeled DAGs,
//! [`kernel`] compares DAGs, [`surrogate`] fits a Gaussian process,
//! [`search`] runs the optimization loop against an [`objective`].

pub mod analysis;
pub mod assembly;
pub mod grammar;
pub mod kernel;
pub mod objective;
pub mod search;
pub mod surrogate;
pub mod term;

pub use assembly::{assemble, ArchGraph};
pub use grammar::{parse_grammar, Grammar};
pub use term::{parse_term, Term};
