use serde::{Deserialize, Serialize};

use super::{ConstraintError, ConstraintSpec};
use crate::lm::{TokenId, Vocabulary};

const ROOT: u32 = 0;

#[derive(Clone, Debug)]
struct Node {
    /// Sorted by token id.
    children: Vec<(TokenId, u32)>,
    /// Predicates whose phrase ends at this node.
    terminals: Vec<usize>,
    depth: usize,
    /// Positive predicates whose phrase passes through this node.
    positives_below: Vec<usize>,
}

impl Node {
    fn new(depth: usize) -> Self {
        Self {
            children: Vec::new(),
            terminals: Vec::new(),
            depth,
            positives_below: Vec::new(),
        }
    }

    fn child(&self, token: TokenId) -> Option<u32> {
        self.children
            .binary_search_by_key(&token, |(t, _)| *t)
            .ok()
            .map(|i| self.children[i].1)
    }
}

#[derive(Clone, Debug)]
pub struct CompiledPredicate {
    pub clause: usize,
    pub negated: bool,
    pub phrase: String,
    pub tokens: Vec<TokenId>,
}

#[derive(Clone, Debug)]
struct CompiledClause {
    min: usize,
    max: Option<usize>,
    rank: Option<u32>,
    negated: usize,
    label: Option<String>,
}

/// A predicate occurrence: tokens `start..end` of the tracked sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSpan {
    pub predicate: usize,
    pub clause: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClauseStatus {
    Unsatisfied,
    Satisfied,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Status {
    pub clauses: Vec<ClauseStatus>,
    /// Every clause satisfied and none violated.
    pub satisfied: bool,
    pub violated: bool,
    /// Per-clause literal counts; equal signatures mean equal counts.
    pub signature: Vec<u16>,
}

/// Runtime image of the clause predicates for one hypothesis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintState {
    seen: Vec<bool>,
    counts: Vec<u16>,
    reached: Vec<bool>,
    clause_violated: Vec<bool>,
    violated: bool,
    cursors: Vec<u32>,
    spans: Vec<MatchSpan>,
    position: usize,
}

impl ConstraintState {
    pub fn violated(&self) -> bool {
        self.violated
    }

    /// Per-clause count of true literals.
    pub fn counts(&self) -> &[u16] {
        &self.counts
    }

    /// Whether each predicate's phrase has appeared.
    pub fn seen(&self) -> &[bool] {
        &self.seen
    }

    /// Every completed positive predicate occurrence, in completion order.
    pub fn satisfied_spans(&self) -> &[MatchSpan] {
        &self.spans
    }

    /// Number of tokens consumed.
    pub fn position(&self) -> usize {
        self.position
    }

    /// Trie nodes of partial matches still in progress.
    pub fn cursor_count(&self) -> usize {
        self.cursors.len()
    }
}

/// CNF lexical constraints compiled to a token trie.
///
/// Matching keeps one cursor per in-progress partial match, so overlapping
/// occurrences of different phrases are all reported.
#[derive(Clone, Debug)]
pub struct ConstraintAutomaton {
    nodes: Vec<Node>,
    predicates: Vec<CompiledPredicate>,
    clauses: Vec<CompiledClause>,
}

impl ConstraintAutomaton {
    pub fn compile(spec: &ConstraintSpec, vocab: &Vocabulary) -> Result<Self, ConstraintError> {
        spec.validate()?;
        let mut nodes = vec![Node::new(0)];
        let mut predicates = Vec::new();
        let mut clauses = Vec::with_capacity(spec.clauses.len());
        for (ci, clause) in spec.clauses.iter().enumerate() {
            for pred in &clause.predicates {
                let tokens = vocab.tokenize_strict(&pred.phrase).map_err(|word| {
                    ConstraintError::UnknownPhrase {
                        phrase: pred.phrase.clone(),
                        word,
                    }
                })?;
                if tokens.iter().any(|t| vocab.is_special(*t)) {
                    return Err(ConstraintError::UnknownPhrase {
                        phrase: pred.phrase.clone(),
                        word: "<special token>".into(),
                    });
                }
                let index = predicates.len();
                let mut node = ROOT as usize;
                for (depth, &token) in tokens.iter().enumerate() {
                    if !pred.negated {
                        nodes[node].positives_below.push(index);
                    }
                    node = match nodes[node].child(token) {
                        Some(next) => next as usize,
                        None => {
                            let next = nodes.len() as u32;
                            nodes.push(Node::new(depth + 1));
                            let children = &mut nodes[node].children;
                            let at = children.partition_point(|(t, _)| *t < token);
                            children.insert(at, (token, next));
                            next as usize
                        }
                    };
                }
                if !pred.negated {
                    nodes[node].positives_below.push(index);
                }
                nodes[node].terminals.push(index);
                predicates.push(CompiledPredicate {
                    clause: ci,
                    negated: pred.negated,
                    phrase: pred.phrase.clone(),
                    tokens: tokens.into_inner(),
                });
            }
            clauses.push(CompiledClause {
                min: clause.min_satisfied,
                max: clause.max_satisfied,
                rank: clause.order_rank,
                negated: clause.negated_count(),
                label: clause.label.clone(),
            });
        }
        Ok(Self {
            nodes,
            predicates,
            clauses,
        })
    }

    pub fn clause_count(&self) -> usize {
        self.clauses.len()
    }

    pub fn predicates(&self) -> &[CompiledPredicate] {
        &self.predicates
    }

    pub fn clause_label(&self, clause: usize) -> Option<&str> {
        self.clauses[clause].label.as_deref()
    }

    pub fn trie_size(&self) -> usize {
        self.nodes.len()
    }

    /// The state before any token: negated literals already hold.
    pub fn initial(&self) -> ConstraintState {
        let mut state = ConstraintState {
            seen: vec![false; self.predicates.len()],
            counts: self.clauses.iter().map(|c| c.negated as u16).collect(),
            reached: vec![false; self.clauses.len()],
            clause_violated: vec![false; self.clauses.len()],
            violated: false,
            cursors: Vec::new(),
            spans: Vec::new(),
            position: 0,
        };
        self.settle(&mut state);
        state
    }

    pub fn advance(&self, state: &ConstraintState, token: TokenId) -> ConstraintState {
        let mut next = state.clone();
        self.advance_in_place(&mut next, token);
        next
    }

    pub fn advance_in_place(&self, state: &mut ConstraintState, token: TokenId) {
        let end = state.position + 1;
        let mut cursors = Vec::with_capacity(state.cursors.len() + 1);
        for &from in std::iter::once(&ROOT).chain(state.cursors.iter()) {
            let Some(node) = self.nodes[from as usize].child(token) else {
                continue;
            };
            let n = &self.nodes[node as usize];
            for &p in &n.terminals {
                let pred = &self.predicates[p];
                if pred.negated {
                    if !state.seen[p] {
                        state.seen[p] = true;
                        state.counts[pred.clause] -= 1;
                    }
                    state.clause_violated[pred.clause] = true;
                    state.violated = true;
                } else {
                    state.spans.push(MatchSpan {
                        predicate: p,
                        clause: pred.clause,
                        start: end - n.depth,
                        end,
                    });
                    if !state.seen[p] {
                        state.seen[p] = true;
                        state.counts[pred.clause] += 1;
                    }
                }
            }
            if !n.children.is_empty() {
                cursors.push(node);
            }
        }
        state.cursors = cursors;
        state.position = end;
        self.settle(state);
    }

    /// Applies max-count and clause-order rules after counts changed.
    fn settle(&self, state: &mut ConstraintState) {
        let mut newly_reached = Vec::new();
        for (i, clause) in self.clauses.iter().enumerate() {
            let count = state.counts[i] as usize;
            if clause.max.is_some_and(|max| count > max) {
                state.clause_violated[i] = true;
                state.violated = true;
            }
            if !state.reached[i] && count >= clause.min {
                state.reached[i] = true;
                newly_reached.push(i);
            }
        }
        for i in newly_reached {
            let Some(rank) = self.clauses[i].rank else {
                continue;
            };
            let early = self
                .clauses
                .iter()
                .enumerate()
                .any(|(j, c)| c.rank.is_some_and(|r| r < rank) && !state.reached[j]);
            if early {
                state.clause_violated[i] = true;
                state.violated = true;
            }
        }
    }

    pub fn clause_status(&self, state: &ConstraintState, clause: usize) -> ClauseStatus {
        if state.clause_violated[clause] {
            ClauseStatus::Violated
        } else if state.counts[clause] as usize >= self.clauses[clause].min {
            ClauseStatus::Satisfied
        } else {
            ClauseStatus::Unsatisfied
        }
    }

    pub fn is_satisfied(&self, state: &ConstraintState) -> bool {
        !state.violated
            && (0..self.clauses.len())
                .all(|i| state.counts[i] as usize >= self.clauses[i].min)
    }

    pub fn satisfied_clauses(&self, state: &ConstraintState) -> usize {
        (0..self.clauses.len())
            .filter(|&i| self.clause_status(state, i) == ClauseStatus::Satisfied)
            .count()
    }

    /// Fraction of clauses currently satisfied; 1 for an empty spec.
    pub fn satisfied_fraction(&self, state: &ConstraintState) -> f64 {
        if self.clauses.is_empty() {
            1.0
        } else {
            self.satisfied_clauses(state) as f64 / self.clauses.len() as f64
        }
    }

    pub fn status(&self, state: &ConstraintState) -> Status {
        let clauses: Vec<_> = (0..self.clauses.len())
            .map(|i| self.clause_status(state, i))
            .collect();
        Status {
            satisfied: self.is_satisfied(state),
            violated: state.violated,
            signature: state.counts.clone(),
            clauses,
        }
    }

    /// Tokens that start or extend a match of a positive predicate not yet
    /// seen, in a clause not yet satisfied. Sorted and deduplicated.
    pub fn advancing_tokens(&self, state: &ConstraintState) -> Vec<TokenId> {
        let wanted = |p: &usize| {
            let pred = &self.predicates[*p];
            !state.seen[*p] && (state.counts[pred.clause] as usize) < self.clauses[pred.clause].min
        };
        let mut tokens = Vec::new();
        for &from in std::iter::once(&ROOT).chain(state.cursors.iter()) {
            for &(token, child) in &self.nodes[from as usize].children {
                if self.nodes[child as usize].positives_below.iter().any(wanted) {
                    tokens.push(token);
                }
            }
        }
        tokens.sort_unstable();
        tokens.dedup();
        tokens
    }

    /// Depth of the deepest partial match that can still complete a wanted
    /// positive predicate (one not yet seen, in a clause below its minimum).
    pub fn progress(&self, state: &ConstraintState) -> u16 {
        state
            .cursors
            .iter()
            .map(|&c| &self.nodes[c as usize])
            .filter(|n| {
                n.positives_below.iter().any(|&p| {
                    let pred = &self.predicates[p];
                    !state.seen[p] && (state.counts[pred.clause] as usize) < self.clauses[pred.clause].min
                })
            })
            .map(|n| n.depth as u16)
            .max()
            .unwrap_or(0)
    }

    /// Replays `tokens` from the initial state.
    pub fn run(&self, tokens: &[TokenId]) -> ConstraintState {
        let mut state = self.initial();
        for &t in tokens {
            self.advance_in_place(&mut state, t);
        }
        state
    }
}
