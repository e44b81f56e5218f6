//! Brute-force reference implementations and random instance generators
//! shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::HashMap;

use nprompt_core::constraint::{Clause, ClauseStatus, ConstraintSpec, Predicate};
use nprompt_core::decode::DecodeParams;
use nprompt_core::lm::{LanguageModel, TableLm, TokenId, Vocabulary};
use rand::Rng;

pub mod ppo;

pub fn occurs(needle: &[TokenId], hay: &[TokenId]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NaiveStatus {
    pub counts: Vec<u16>,
    pub clauses: Vec<ClauseStatus>,
    pub satisfied: bool,
    pub violated: bool,
    /// `(predicate, start, end)` for every occurrence of a positive phrase.
    pub spans: Vec<(usize, usize, usize)>,
}

impl NaiveStatus {
    pub fn satisfied_clauses(&self) -> usize {
        self.clauses
            .iter()
            .filter(|c| **c == ClauseStatus::Satisfied)
            .count()
    }
}

/// Evaluates a spec on a full sequence by rescanning every prefix.
pub fn naive_status(spec: &ConstraintSpec, vocab: &Vocabulary, seq: &[TokenId]) -> NaiveStatus {
    let phrases: Vec<Vec<(Vec<TokenId>, bool)>> = spec
        .clauses
        .iter()
        .map(|c| {
            c.predicates
                .iter()
                .map(|p| (vocab.tokenize(&p.phrase).into_inner(), p.negated))
                .collect()
        })
        .collect();
    let count_at = |ci: usize, t: usize| -> usize {
        phrases[ci]
            .iter()
            .filter(|(ph, neg)| occurs(ph, &seq[..t]) != *neg)
            .count()
    };
    let m = spec.clauses.len();
    let mut violated = vec![false; m];
    let mut reach: Vec<Option<usize>> = vec![None; m];
    for (ci, clause) in spec.clauses.iter().enumerate() {
        if phrases[ci].iter().any(|(ph, neg)| *neg && occurs(ph, seq)) {
            violated[ci] = true;
        }
        for t in 0..=seq.len() {
            let c = count_at(ci, t);
            if clause.max_satisfied.is_some_and(|max| c > max) {
                violated[ci] = true;
            }
            if reach[ci].is_none() && c >= clause.min_satisfied {
                reach[ci] = Some(t);
            }
        }
    }
    for (ci, clause) in spec.clauses.iter().enumerate() {
        let (Some(rank), Some(t)) = (clause.order_rank, reach[ci]) else {
            continue;
        };
        let early = spec.clauses.iter().enumerate().any(|(cj, other)| {
            other.order_rank.is_some_and(|r| r < rank) && reach[cj].is_none_or(|tj| tj > t)
        });
        if early {
            violated[ci] = true;
        }
    }
    let counts: Vec<u16> = (0..m).map(|ci| count_at(ci, seq.len()) as u16).collect();
    let clauses: Vec<ClauseStatus> = (0..m)
        .map(|ci| {
            if violated[ci] {
                ClauseStatus::Violated
            } else if counts[ci] as usize >= spec.clauses[ci].min_satisfied {
                ClauseStatus::Satisfied
            } else {
                ClauseStatus::Unsatisfied
            }
        })
        .collect();
    let mut spans = Vec::new();
    let mut pi = 0;
    for clause_phrases in &phrases {
        for (ph, neg) in clause_phrases {
            if !neg {
                for start in 0..seq.len() {
                    if seq[start..].starts_with(ph) {
                        spans.push((pi, start, start + ph.len()));
                    }
                }
            }
            pi += 1;
        }
    }
    spans.sort_unstable();
    let any_violated = violated.iter().any(|v| *v);
    NaiveStatus {
        satisfied: !any_violated && clauses.iter().all(|c| *c == ClauseStatus::Satisfied),
        violated: any_violated,
        counts,
        clauses,
        spans,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    /// Generated tokens, with a trailing EOS when finished.
    pub continuation: Vec<TokenId>,
    pub log_prob: f64,
    pub score: f64,
    pub satisfied: bool,
}

fn oracle_order(a: &OracleResult, b: &OracleResult) -> Ordering {
    let last = |r: &OracleResult| r.continuation.last().copied().unwrap_or(TokenId::PAD);
    b.satisfied
        .cmp(&a.satisfied)
        .then(b.score.total_cmp(&a.score))
        .then(last(a).cmp(&last(b)))
        .then(a.continuation.cmp(&b.continuation))
}

/// Enumerates every continuation of up to `max_new_tokens` tokens: those that
/// end in EOS from a satisfied state, plus every non-violating sequence of
/// exactly `max_new_tokens` words. Returns the best under the decoder's
/// final ranking, or `None` if nothing survives.
pub fn brute_force_best(
    lm: &dyn LanguageModel,
    prefix: &[TokenId],
    spec: &ConstraintSpec,
    params: &DecodeParams,
) -> Option<OracleResult> {
    let vocab = lm.vocab();
    let words: Vec<TokenId> = vocab
        .ids()
        .filter(|&id| vocab.is_generatable(id) && id != TokenId::EOS && id != TokenId::UNK)
        .collect();
    let m = spec.clauses.len();
    let n = params.max_new_tokens;
    let score = |lp: f64, len: usize, frac: f64| {
        lp / (len as f64).powf(params.length_penalty) + params.satisfaction_weight * frac
    };
    let mut best: Option<OracleResult> = None;
    let mut offer = |r: OracleResult| {
        if best.as_ref().is_none_or(|b| oracle_order(&r, b) == Ordering::Less) {
            best = Some(r);
        }
    };
    // depth-first over word sequences, carrying the running log-prob
    let mut stack: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((seq, lp)) = stack.pop() {
        let status = naive_status(spec, vocab, &seq);
        if status.violated {
            continue;
        }
        let mut context = prefix.to_vec();
        context.extend_from_slice(&seq);
        let frac = if m == 0 {
            1.0
        } else {
            status.satisfied_clauses() as f64 / m as f64
        };
        if seq.len() == n {
            if !seq.is_empty() {
                offer(OracleResult {
                    score: score(lp, seq.len(), frac),
                    continuation: seq,
                    log_prob: lp,
                    satisfied: status.satisfied,
                });
            }
            continue;
        }
        let next = lm.next_token_log_probs(&context).unwrap();
        if status.satisfied && next[TokenId::EOS.index()] > f64::NEG_INFINITY {
            let total = lp + next[TokenId::EOS.index()];
            let mut cont = seq.clone();
            cont.push(TokenId::EOS);
            offer(OracleResult {
                score: score(total, cont.len(), 1.0),
                continuation: cont,
                log_prob: total,
                satisfied: true,
            });
        }
        for &w in &words {
            if next[w.index()] > f64::NEG_INFINITY {
                let mut s = seq.clone();
                s.push(w);
                stack.push((s, lp + next[w.index()]));
            }
        }
    }
    best
}

/// Vocabulary `w0 .. w{n-1}`.
pub fn word_vocab(n: usize) -> Vocabulary {
    Vocabulary::new((0..n).map(|i| format!("w{i}")))
}

/// Random table LM whose logits come from a small set, so that ties occur,
/// with roughly 15% of entries masked.
pub fn random_table_lm<R: Rng>(rng: &mut R, vocab: &Vocabulary, order: usize) -> TableLm {
    let levels = [0.0, 0.5, 1.0, 1.5, 2.0];
    let row = |rng: &mut R| -> Vec<f64> {
        vocab
            .ids()
            .map(|_| {
                if rng.random_bool(0.15) {
                    f64::NEG_INFINITY
                } else {
                    levels[rng.random_range(0..levels.len())]
                }
            })
            .collect()
    };
    let symbols: Vec<TokenId> = std::iter::once(TokenId::BOS)
        .chain(vocab.ids().filter(|&id| vocab.is_generatable(id) && id != TokenId::EOS))
        .collect();
    let mut keys: Vec<Vec<TokenId>> = vec![Vec::new()];
    for _ in 1..order {
        keys = keys
            .into_iter()
            .flat_map(|k| {
                symbols.iter().map(move |&s| {
                    let mut k = k.clone();
                    k.push(s);
                    k
                })
            })
            .collect();
    }
    let mut rows = HashMap::new();
    for key in keys {
        if rng.random_bool(0.8) {
            let r = row(rng);
            rows.insert(key, r);
        }
    }
    let default = row(rng);
    TableLm::new(vocab.clone(), order, rows, Some(default)).unwrap()
}

/// Random phrase of 1 to `max_len` words over `w0 .. w{n-1}`.
pub fn random_phrase<R: Rng>(rng: &mut R, n: usize, max_len: usize) -> String {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| format!("w{}", rng.random_range(0..n)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random valid spec with up to `max_clauses` clauses of up to `max_preds`
/// predicates, including negations, bounds and ranks.
pub fn random_spec<R: Rng>(
    rng: &mut R,
    n: usize,
    max_clauses: usize,
    max_preds: usize,
    negation_rate: f64,
) -> ConstraintSpec {
    let clauses = (0..rng.random_range(0..=max_clauses))
        .map(|_| loop {
            let k = rng.random_range(1..=max_preds);
            let predicates: Vec<Predicate> = (0..k)
                .map(|_| {
                    let phrase = random_phrase(rng, n, 2);
                    if rng.random_bool(negation_rate) {
                        Predicate::negated(&phrase)
                    } else {
                        Predicate::positive(&phrase)
                    }
                })
                .collect();
            let negated = predicates.iter().filter(|p| p.negated).count();
            let min = rng.random_range(1..=k);
            let max = if rng.random_bool(0.3) {
                Some(rng.random_range(min.max(negated)..=k))
            } else {
                None
            };
            let clause = Clause {
                predicates,
                min_satisfied: min,
                max_satisfied: max,
                order_rank: rng.random_bool(0.3).then(|| rng.random_range(1..=3)),
                label: None,
            };
            if clause.validate(0).is_ok() {
                break clause;
            }
        })
        .collect();
    ConstraintSpec::new(clauses)
}

pub fn random_sequence<R: Rng>(rng: &mut R, vocab: &Vocabulary, max_len: usize) -> Vec<TokenId> {
    let words: Vec<TokenId> = vocab
        .ids()
        .filter(|&id| vocab.is_generatable(id) && id != TokenId::EOS && id != TokenId::UNK)
        .collect();
    (0..rng.random_range(0..=max_len))
        .map(|_| words[rng.random_range(0..words.len())])
        .collect()
}
