//! Lexical constraints in conjunctive normal form and their trie automaton.

mod automaton;
mod spec;

pub use automaton::{
    ClauseStatus, CompiledPredicate, ConstraintAutomaton, ConstraintState, MatchSpan, Status,
};
pub use spec::{normalize_phrase, Clause, ConstraintSpec, Predicate};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConstraintError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("clause {clause}: {reason}")]
    InvalidClause { clause: usize, reason: String },
    #[error("phrase {phrase:?} contains out-of-vocabulary word {word:?}")]
    UnknownPhrase { phrase: String, word: String },
}
