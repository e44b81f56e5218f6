//! End-to-end prompt optimization.
//!
//! A prompt is cut to its prefix, clauses are built from the taxonomy and the
//! caller's selection, and the constrained decoder continues the prefix. The
//! result keeps the prefix words verbatim, including words the model does
//! not know.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constraint::{ClauseStatus, ConstraintAutomaton, ConstraintError, ConstraintSpec};
use crate::decode::{decode, render_spans, DecodeError, DecodeParams, HighlightSpan};
use crate::lm::{split_words, LanguageModel, TokenId};
use crate::pipeline::{build_clauses, extract_prefix, ClauseError, ClauseSelection, KeywordTaxonomy};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizeError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error(transparent)]
    Clauses(#[from] ClauseError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

impl OptimizeError {
    /// The request is well-formed but no output can satisfy it.
    pub fn is_unsatisfiable(&self) -> bool {
        match self {
            OptimizeError::Clauses(e) => e.is_conflict(),
            OptimizeError::Decode(e) => matches!(e, DecodeError::Unsatisfiable),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClauseReport {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub status: ClauseStatus,
    pub count: u16,
    pub phrases: Vec<String>,
    pub negated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimization {
    pub prompt: String,
    pub prefix: String,
    pub optimized_prompt: String,
    pub highlights: Vec<HighlightSpan>,
    pub clause_status: Vec<ClauseReport>,
    pub satisfied: bool,
    pub log_prob: f64,
    pub score: f64,
    pub new_tokens: usize,
}

#[derive(Clone)]
pub struct PromptOptimizer {
    lm: Arc<dyn LanguageModel>,
    taxonomy: KeywordTaxonomy,
}

impl PromptOptimizer {
    pub fn new(lm: Arc<dyn LanguageModel>, taxonomy: KeywordTaxonomy) -> Self {
        Self { lm, taxonomy }
    }

    pub fn lm(&self) -> &dyn LanguageModel {
        self.lm.as_ref()
    }

    pub fn taxonomy(&self) -> &KeywordTaxonomy {
        &self.taxonomy
    }

    pub fn clauses(&self, selection: &ClauseSelection) -> Result<ConstraintSpec, OptimizeError> {
        Ok(build_clauses(&self.taxonomy, selection)?)
    }

    pub fn optimize(
        &self,
        prompt: &str,
        selection: &ClauseSelection,
        params: &DecodeParams,
    ) -> Result<Optimization, OptimizeError> {
        if prompt.trim().is_empty() {
            return Err(OptimizeError::EmptyPrompt);
        }
        let spec = self.clauses(selection)?;
        self.optimize_with_spec(prompt, &spec, params)
    }

    /// Optimizes under an explicit constraint set; an empty set decodes
    /// without constraints.
    pub fn optimize_with_spec(
        &self,
        prompt: &str,
        spec: &ConstraintSpec,
        params: &DecodeParams,
    ) -> Result<Optimization, OptimizeError> {
        let prompt = prompt.trim();
        if prompt.is_empty() {
            return Err(OptimizeError::EmptyPrompt);
        }
        let vocab = self.lm.vocab();
        let prefix = extract_prefix(prompt);
        let mut words = split_words(prefix);
        let prefix_ids: Vec<TokenId> = words.iter().map(|w| vocab.lookup(w)).collect();
        let automaton = ConstraintAutomaton::compile(spec, vocab)?;
        let out = decode(self.lm.as_ref(), &prefix_ids, &automaton, params.clone())?;
        let best = out.best();
        words.extend(
            best.words()
                .iter()
                .map(|&id| vocab.token(id).unwrap_or(crate::lm::UNK_TOKEN).to_string()),
        );
        let (optimized_prompt, highlights) =
            render_spans(&words, best.prefix_len, best.cstate.satisfied_spans(), &automaton);
        let status = automaton.status(&best.cstate);
        let clause_status = spec
            .clauses
            .iter()
            .enumerate()
            .map(|(i, c)| ClauseReport {
                index: i,
                label: c.label.clone(),
                status: status.clauses[i],
                count: status.signature[i],
                phrases: c.predicates.iter().map(|p| p.phrase.clone()).collect(),
                negated: c.is_pure_exclusion(),
            })
            .collect();
        Ok(Optimization {
            prompt: prompt.to_string(),
            prefix: prefix.to_string(),
            optimized_prompt,
            highlights,
            clause_status,
            satisfied: best.satisfied,
            log_prob: best.log_prob,
            score: best.score,
            new_tokens: best.words().len(),
        })
    }
}
