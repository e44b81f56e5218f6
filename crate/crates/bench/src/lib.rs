//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use nprompt_core::lm::{NgramLm, TokenId};
use nprompt_core::pipeline::{bundled_eval_prompts, bundled_train_prompts, bundled_vocabulary, build_clauses, extract_prefix};
use nprompt_core::{ClauseSelection, ConstraintAutomaton, ConstraintSpec, KeywordTaxonomy, PromptOptimizer};

/// Bigram model over the bundled training prompts.
pub fn bundled_lm() -> NgramLm {
    let vocab = bundled_vocabulary();
    let corpus: Vec<Vec<TokenId>> = bundled_train_prompts()
        .iter()
        .map(|p| vocab.tokenize(p).into_inner())
        .collect();
    NgramLm::train(vocab, corpus.iter().map(Vec::as_slice), 2, 0.1)
}

pub fn optimizer() -> PromptOptimizer {
    PromptOptimizer::new(Arc::new(bundled_lm()), KeywordTaxonomy::bundled())
}

/// The six-clause auto spec for `seed`.
pub fn auto_spec(seed: u64) -> ConstraintSpec {
    build_clauses(&KeywordTaxonomy::bundled(), &ClauseSelection::auto(seed)).expect("auto clauses build")
}

pub fn auto_automaton(seed: u64) -> (ConstraintAutomaton, ConstraintSpec) {
    let spec = auto_spec(seed);
    let a = ConstraintAutomaton::compile(&spec, &bundled_vocabulary()).expect("spec compiles");
    (a, spec)
}

/// Token prefixes of the first `n` evaluation prompts.
pub fn eval_prefixes(n: usize) -> Vec<Vec<TokenId>> {
    let vocab = bundled_vocabulary();
    bundled_eval_prompts()
        .iter()
        .take(n)
        .map(|p| vocab.tokenize(extract_prefix(p)).into_inner())
        .collect()
}
