//! Constrained prompt optimization.
//!
//! [`lm`] defines the word-level language models, [`constraint`] compiles
//! keyword clauses into a matching automaton, [`decode`] runs the constrained
//! beam search, [`pipeline`] prepares prompts and clauses, [`scoring`] holds
//! the reward and the image and score backends, and [`trainer`] adapts a
//! policy with SFT and PPO. [`engine`] strings the pieces together.

pub mod constraint;
pub mod decode;
pub mod engine;
pub mod lm;
pub mod pipeline;
pub mod scoring;
pub mod trainer;

pub use constraint::{Clause, ConstraintAutomaton, ConstraintSpec, Predicate};
pub use decode::{DecodeParams, HighlightSpan};
pub use engine::{ClauseReport, OptimizeError, Optimization, PromptOptimizer};
pub use lm::{LanguageModel, TokenId, Vocabulary};
pub use pipeline::{ClauseSelection, KeywordTaxonomy};
