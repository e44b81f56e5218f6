//! Lexically constrained beam search.
//!
//! Each step expands every live beam with its top-k tokens plus every token
//! that advances an unmet positive predicate, prunes candidates that violate
//! the constraints, then keeps the best candidate of each constraint
//! signature (refined by partial-match depth) before filling the rest of the
//! beam by score.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::constraint::{ConstraintAutomaton, ConstraintState};
use crate::lm::{render_words, LanguageModel, LmError, TokenId, TokenSequence, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub beam_size: usize,
    pub length_penalty: f64,
    pub max_new_tokens: usize,
    /// Weight `λ` of the satisfied-clause fraction in the selection score.
    pub satisfaction_weight: f64,
    /// LM-ranked tokens considered per beam, before constraint tokens.
    pub top_k: usize,
    pub seed: u64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            beam_size: 8,
            length_penalty: 1.0,
            max_new_tokens: 32,
            satisfaction_weight: 0.25,
            top_k: 20,
            seed: 0,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::InvalidParams(m.into()));
        if self.beam_size == 0 {
            return bad("beam_size must be at least 1");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be at least 1");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if !(self.satisfaction_weight >= 0.0 && self.satisfaction_weight.is_finite()) {
            return bad("satisfaction_weight must be finite and non-negative");
        }
        if !self.length_penalty.is_finite() {
            return bad("length_penalty must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("invalid decode parameters: {0}")]
    InvalidParams(String),
    #[error("constraints are unsatisfiable under masking: no hypothesis survives")]
    Unsatisfiable,
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Clone, Debug)]
pub struct Hypothesis {
    /// Prefix followed by the continuation; ends with EOS when finished.
    pub tokens: TokenSequence,
    pub prefix_len: usize,
    /// Log-probability of the continuation given the prefix.
    pub log_prob: f64,
    pub cstate: ConstraintState,
    pub finished: bool,
    pub satisfied: bool,
    pub score: f64,
}

impl Hypothesis {
    /// Generated tokens, including a trailing EOS when finished.
    pub fn continuation(&self) -> &[TokenId] {
        &self.tokens[self.prefix_len..]
    }

    /// Generated tokens without the trailing EOS.
    pub fn words(&self) -> &[TokenId] {
        let cont = self.continuation();
        match cont.last() {
            Some(&TokenId::EOS) => &cont[..cont.len() - 1],
            _ => cont,
        }
    }

    /// Prefix plus generated words, without EOS.
    pub fn text_tokens(&self) -> &[TokenId] {
        &self.tokens[..self.prefix_len + self.words().len()]
    }

    fn last_token(&self) -> TokenId {
        self.tokens.last().copied().unwrap_or(TokenId::PAD)
    }
}

/// Score descending, then last token id ascending, then continuation
/// lexicographically.
pub fn compare_candidates(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.last_token().cmp(&b.last_token()))
        .then_with(|| a.continuation().cmp(b.continuation()))
}

/// Fully satisfied hypotheses first, then [`compare_candidates`].
pub fn compare_results(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.satisfied
        .cmp(&a.satisfied)
        .then_with(|| compare_candidates(a, b))
}

/// `log_prob / len^penalty + λ · fraction`.
pub fn selection_score(log_prob: f64, len: usize, fraction: f64, params: &DecodeParams) -> f64 {
    log_prob / (len as f64).powf(params.length_penalty) + params.satisfaction_weight * fraction
}

#[derive(Clone, Debug)]
pub struct DecodeOutput {
    /// All finished and length-capped hypotheses, best first.
    pub hypotheses: Vec<Hypothesis>,
    pub steps: usize,
}

impl DecodeOutput {
    pub fn best(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }
}

pub struct Decoder<'a> {
    lm: &'a dyn LanguageModel,
    automaton: &'a ConstraintAutomaton,
    params: DecodeParams,
}

impl<'a> Decoder<'a> {
    pub fn new(
        lm: &'a dyn LanguageModel,
        automaton: &'a ConstraintAutomaton,
        params: DecodeParams,
    ) -> Result<Self, DecodeError> {
        params.validate()?;
        Ok(Self {
            lm,
            automaton,
            params,
        })
    }

    pub fn params(&self) -> &DecodeParams {
        &self.params
    }

    /// The single beam before any token is generated.
    pub fn initial(&self, prefix: &[TokenId]) -> Hypothesis {
        let cstate = self.automaton.initial();
        Hypothesis {
            tokens: prefix.to_vec().into(),
            prefix_len: prefix.len(),
            log_prob: 0.0,
            satisfied: self.automaton.is_satisfied(&cstate),
            score: self.params.satisfaction_weight * self.automaton.satisfied_fraction(&cstate),
            cstate,
            finished: false,
        }
    }

    /// Token ids a beam may extend with, in ascending order.
    pub fn candidate_tokens(&self, beam: &Hypothesis, log_probs: &[f64]) -> Vec<TokenId> {
        let vocab = self.lm.vocab();
        let allow_eos = self.automaton.is_satisfied(&beam.cstate);
        let allowed = |id: TokenId| {
            vocab.is_generatable(id)
                && id != TokenId::UNK
                && (id != TokenId::EOS || allow_eos)
                && log_probs[id.index()] > f64::NEG_INFINITY
        };
        let mut ranked: Vec<TokenId> = vocab.ids().filter(|&id| allowed(id)).collect();
        ranked.sort_by(|a, b| {
            log_probs[b.index()]
                .total_cmp(&log_probs[a.index()])
                .then(a.cmp(b))
        });
        ranked.truncate(self.params.top_k);
        ranked.extend(
            self.automaton
                .advancing_tokens(&beam.cstate)
                .into_iter()
                .filter(|&id| allowed(id)),
        );
        ranked.sort_unstable();
        ranked.dedup();
        ranked
    }

    fn expand(&self, beams: &[Hypothesis]) -> Result<Vec<Hypothesis>, DecodeError> {
        let mut out = Vec::new();
        for beam in beams.iter().filter(|b| !b.finished) {
            let log_probs = self.lm.next_token_log_probs(&beam.tokens)?;
            for token in self.candidate_tokens(beam, &log_probs) {
                let cstate = if token == TokenId::EOS {
                    beam.cstate.clone()
                } else {
                    self.automaton.advance(&beam.cstate, token)
                };
                if cstate.violated() {
                    continue;
                }
                let log_prob = beam.log_prob + log_probs[token.index()];
                let mut tokens = beam.tokens.clone();
                tokens.push(token);
                let len = tokens.len() - beam.prefix_len;
                let fraction = self.automaton.satisfied_fraction(&cstate);
                out.push(Hypothesis {
                    score: selection_score(log_prob, len, fraction, &self.params),
                    satisfied: self.automaton.is_satisfied(&cstate),
                    finished: token == TokenId::EOS,
                    prefix_len: beam.prefix_len,
                    tokens,
                    log_prob,
                    cstate,
                });
            }
        }
        Ok(out)
    }

    /// One search step: expand, prune, then select by signature group and
    /// score. Returned beams may include newly finished hypotheses.
    pub fn step(&self, beams: &[Hypothesis]) -> Result<Vec<Hypothesis>, DecodeError> {
        Ok(self.select(self.candidates(beams)?))
    }

    /// Every surviving one-token extension of the live beams, sorted by
    /// [`compare_candidates`].
    pub fn candidates(&self, beams: &[Hypothesis]) -> Result<Vec<Hypothesis>, DecodeError> {
        let mut candidates = self.expand(beams)?;
        candidates.sort_by(compare_candidates);
        Ok(candidates)
    }

    /// Takes the best candidate of every group, then fills remaining slots
    /// in score order. A group is a constraint signature plus the depth of
    /// the deepest wanted partial match, so a hypothesis halfway through a
    /// multi-word keyword is not crowded out by its own signature. Groups
    /// with more satisfied clauses, then deeper partial matches, come first.
    /// `candidates` must already be sorted by [`compare_candidates`].
    fn select(&self, candidates: Vec<Hypothesis>) -> Vec<Hypothesis> {
        let width = self.params.beam_size;
        let progress: Vec<u16> = candidates.iter().map(|c| self.automaton.progress(&c.cstate)).collect();
        let mut group_best: HashMap<(&[u16], u16), usize> = HashMap::new();
        for (i, c) in candidates.iter().enumerate() {
            group_best.entry((c.cstate.counts(), progress[i])).or_insert(i);
        }
        let mut reps: Vec<usize> = group_best.into_values().collect();
        let sat = |i: usize| self.automaton.satisfied_clauses(&candidates[i].cstate);
        reps.sort_by(|&a, &b| {
            sat(b)
                .cmp(&sat(a))
                .then(progress[b].cmp(&progress[a]))
                .then(a.cmp(&b))
        });
        reps.truncate(width);

        let mut taken = vec![false; candidates.len()];
        for &i in &reps {
            taken[i] = true;
        }
        let mut room = width - reps.len();
        for flag in taken.iter_mut() {
            if room == 0 {
                break;
            }
            if !*flag {
                *flag = true;
                room -= 1;
            }
        }
        candidates
            .into_iter()
            .zip(taken)
            .filter_map(|(c, keep)| keep.then_some(c))
            .collect()
    }

    pub fn decode(&self, prefix: &[TokenId]) -> Result<DecodeOutput, DecodeError> {
        let start = self.initial(prefix);
        if start.cstate.violated() {
            return Err(DecodeError::Unsatisfiable);
        }
        let mut alive = vec![start];
        let mut finished = Vec::new();
        let mut steps = 0;
        while steps < self.params.max_new_tokens && !alive.is_empty() {
            let (done, live): (Vec<_>, Vec<_>) =
                self.step(&alive)?.into_iter().partition(|h| h.finished);
            finished.extend(done);
            alive = live;
            steps += 1;
        }
        // live beams here have reached the length cap
        let mut hypotheses = finished;
        hypotheses.extend(alive);
        if hypotheses.is_empty() {
            return Err(DecodeError::Unsatisfiable);
        }
        hypotheses.sort_by(compare_results);
        Ok(DecodeOutput { hypotheses, steps })
    }
}

pub fn decode(
    lm: &dyn LanguageModel,
    prefix: &[TokenId],
    automaton: &ConstraintAutomaton,
    params: DecodeParams,
) -> Result<DecodeOutput, DecodeError> {
    Decoder::new(lm, automaton, params)?.decode(prefix)
}

/// A satisfied keyword occurrence in the rendered prompt, as character
/// offsets `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighlightSpan {
    pub start: usize,
    pub end: usize,
    pub clause: usize,
    pub predicate: usize,
    pub phrase: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Renders a hypothesis and maps its satisfied spans onto the surface text.
pub fn highlight(
    h: &Hypothesis,
    vocab: &Vocabulary,
    automaton: &ConstraintAutomaton,
) -> (String, Vec<HighlightSpan>) {
    let words: Vec<&str> = h
        .text_tokens()
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(crate::lm::UNK_TOKEN))
        .collect();
    render_spans(&words, h.prefix_len, h.cstate.satisfied_spans(), automaton)
}

/// Like [`highlight`] for arbitrary rendered words; spans are relative to the
/// token at `offset`.
pub fn render_spans<S: AsRef<str>>(
    words: &[S],
    offset: usize,
    spans: &[crate::constraint::MatchSpan],
    automaton: &ConstraintAutomaton,
) -> (String, Vec<HighlightSpan>) {
    let (text, offsets) = render_words(words);
    let mut out: Vec<HighlightSpan> = spans
        .iter()
        .filter(|s| offset + s.end <= offsets.len())
        .map(|s| HighlightSpan {
            start: offsets[offset + s.start].0,
            end: offsets[offset + s.end - 1].1,
            clause: s.clause,
            predicate: s.predicate,
            phrase: automaton.predicates()[s.predicate].phrase.clone(),
            label: automaton.clause_label(s.clause).map(str::to_string),
        })
        .collect();
    out.sort_by_key(|s| (s.start, s.end, s.clause, s.predicate));
    out.dedup();
    (text, out)
}
