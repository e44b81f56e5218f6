//! Supervised fine-tuning of a [`Policy`] on a prompt corpus.
//!
//! The target of every row is the Laplace-smoothed corpus distribution
//! `p(w | h) = (c(h, w) + alpha) / (c(h) + alpha * |S|)` over the policy
//! support `S`. One step moves each observed row a fraction `lr` of the way
//! toward the target logits:
//!
//! `theta <- (1 - lr) * theta + lr * log p`
//!
//! so after `k` steps `theta_k = a * theta_0 + (1 - a) * log p` with
//! `a = (1 - lr)^k`. Training evaluates that closed form directly at every
//! log checkpoint.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Policy, TrainError};
use crate::lm::{LanguageModel, TokenId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Sequences per step. Steps use the expected full-corpus gradient, so
    /// this only scales the epoch count in the log.
    pub batch_size: usize,
    pub order: usize,
    pub alpha: f64,
    pub log_every: usize,
}

impl SftConfig {
    pub fn desk() -> Self {
        Self {
            steps: 2_000,
            learning_rate: 0.01,
            batch_size: 256,
            order: 3,
            alpha: 1.0,
            log_every: 100,
        }
    }

    pub fn full() -> Self {
        Self {
            steps: 15_000,
            learning_rate: 5e-5,
            batch_size: 256,
            log_every: 1_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return Err(TrainError::Config("SFT learning rate must lie in [0, 1]".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(TrainError::Config("SFT smoothing alpha must be positive".into()));
        }
        if self.order == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(TrainError::Config("SFT order, batch size and log interval must be positive".into()));
        }
        Ok(())
    }
}

impl Default for SftConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftLogEntry {
    pub step: usize,
    pub epoch: f64,
    pub train_perplexity: f64,
    pub heldout_perplexity: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SftOutcome {
    pub policy: Policy,
    pub log: Vec<SftLogEntry>,
}

/// Smoothed corpus statistics for every context suffix of the corpus.
#[derive(Clone, Debug)]
pub struct SftTarget {
    order: usize,
    log_target: HashMap<Vec<TokenId>, Vec<f64>>,
    /// Full-width context counts, used for the training perplexity.
    counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>>,
    tokens: u64,
    sentences: usize,
}

impl SftTarget {
    pub fn from_corpus(
        policy: &Policy,
        corpus: &[Vec<TokenId>],
        alpha: f64,
    ) -> Result<Self, TrainError> {
        if corpus.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let vocab = policy.vocab();
        let order = policy.order();
        let width = order - 1;
        let mut by_key: HashMap<Vec<TokenId>, HashMap<TokenId, u64>> = HashMap::new();
        let mut counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>> = HashMap::new();
        let mut tokens = 0;
        for sentence in corpus {
            let mut padded = vec![TokenId::BOS; width];
            padded.extend_from_slice(sentence);
            padded.push(TokenId::EOS);
            for i in width..padded.len() {
                let w = padded[i];
                if !policy.in_support(w) {
                    return Err(TrainError::OutsideSupport(
                        vocab.token(w).unwrap_or("?").to_string(),
                    ));
                }
                let full = &padded[i - width..i];
                *counts.entry(full.to_vec()).or_default().entry(w).or_default() += 1;
                for s in 0..=width {
                    *by_key.entry(full[s..].to_vec()).or_default().entry(w).or_default() += 1;
                }
                tokens += 1;
            }
        }
        let support_size = policy.support_ids().count() as f64;
        let log_target = by_key
            .into_iter()
            .map(|(key, row)| {
                let total: u64 = row.values().sum();
                let denom = total as f64 + alpha * support_size;
                let logits = vocab
                    .ids()
                    .map(|id| {
                        if policy.in_support(id) {
                            let c = row.get(&id).copied().unwrap_or(0) as f64;
                            ((c + alpha) / denom).ln()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (key, logits)
            })
            .collect();
        Ok(Self {
            order,
            log_target,
            counts,
            tokens,
            sentences: corpus.len(),
        })
    }

    pub fn log_target(&self, key: &[TokenId]) -> Option<&[f64]> {
        self.log_target.get(key).map(Vec::as_slice)
    }

    pub fn token_count(&self) -> u64 {
        self.tokens
    }

    /// `theta_0` for every target row: the stored row if present, otherwise
    /// the row `initial` currently uses for that context.
    fn starting_rows(&self, initial: &Policy) -> HashMap<Vec<TokenId>, Vec<f64>> {
        let mut rows = initial.rows().clone();
        for key in self.log_target.keys() {
            if !rows.contains_key(key) {
                let from = initial.resolve(key);
                rows.insert(key.clone(), initial.rows()[&from].clone());
            }
        }
        rows
    }

    /// One relaxation step applied in place.
    pub fn step(&self, policy: &mut Policy, lr: f64) -> Result<(), TrainError> {
        if self.log_target.keys().any(|k| policy.logits(k).is_none()) {
            *policy = Policy::from_rows(
                policy.vocab().clone(),
                policy.order(),
                policy.support().to_vec(),
                self.starting_rows(policy),
            )?;
        }
        let support = policy.support().to_vec();
        for (key, target) in &self.log_target {
            let row = policy.logits_mut(key).expect("row inserted above");
            for i in 0..row.len() {
                if support[i] {
                    row[i] = (1.0 - lr) * row[i] + lr * target[i];
                }
            }
        }
        Ok(())
    }

    /// The policy after `k` steps from `initial`, in closed form.
    pub fn at_step(&self, initial: &Policy, lr: f64, k: usize) -> Result<Policy, TrainError> {
        if initial.order() != self.order {
            return Err(TrainError::Config("policy order differs from the target order".into()));
        }
        let a = (1.0 - lr).powf(k as f64);
        let mut rows = self.starting_rows(initial);
        for (key, target) in &self.log_target {
            let row = rows.get_mut(key).expect("starting row");
            for i in 0..row.len() {
                if initial.in_support(TokenId(i as u32)) {
                    row[i] = a * row[i] + (1.0 - a) * target[i];
                }
            }
        }
        Policy::from_rows(initial.vocab().clone(), self.order, initial.support().to_vec(), rows)
    }

    /// `exp` of the mean negative log-likelihood of the corpus tokens.
    pub fn train_perplexity(&self, policy: &Policy) -> f64 {
        let mut nll = 0.0;
        for (key, row) in &self.counts {
            let lp = policy.log_probs_of(&policy.resolve(key));
            for (w, c) in row {
                nll -= *c as f64 * lp[w.index()];
            }
        }
        (nll / self.tokens as f64).exp()
    }
}

/// Perplexity of `sentences` (each closed by EOS) under `lm`.
pub fn perplexity(lm: &dyn LanguageModel, sentences: &[Vec<TokenId>]) -> Result<f64, TrainError> {
    let mut nll = 0.0;
    let mut n = 0usize;
    for s in sentences {
        let mut seq = s.clone();
        seq.push(TokenId::EOS);
        nll -= lm.continuation_log_prob(&[], &seq)?;
        n += seq.len();
    }
    if n == 0 {
        return Err(TrainError::EmptyCorpus);
    }
    Ok((nll / n as f64).exp())
}

/// Fine-tunes `initial` on `corpus`, logging perplexities every
/// `log_every` steps.
pub fn sft_train(
    initial: &Policy,
    corpus: &[Vec<TokenId>],
    heldout: &[Vec<TokenId>],
    config: &SftConfig,
) -> Result<SftOutcome, TrainError> {
    config.validate()?;
    if initial.order() != config.order {
        return Err(TrainError::Config(format!(
            "initial policy has order {}, config asks for {}",
            initial.order(),
            config.order
        )));
    }
    let target = SftTarget::from_corpus(initial, corpus, config.alpha)?;
    let mut checkpoints: Vec<usize> = (0..config.steps).step_by(config.log_every).collect();
    checkpoints.push(config.steps);
    let mut log = Vec::with_capacity(checkpoints.len());
    for &k in &checkpoints {
        let policy = if k == 0 {
            initial.clone()
        } else {
            target.at_step(initial, config.learning_rate, k)?
        };
        log.push(SftLogEntry {
            step: k,
            epoch: (k * config.batch_size) as f64 / target.sentences as f64,
            train_perplexity: target.train_perplexity(&policy),
            heldout_perplexity: if heldout.is_empty() {
                None
            } else {
                Some(perplexity(&policy, heldout)?)
            },
        });
    }
    let policy = if config.steps == 0 {
        initial.clone()
    } else {
        target.at_step(initial, config.learning_rate, config.steps)?
    };
    Ok(SftOutcome { policy, log })
}

/// Sentences of `corpus` tokenized for `policy`, excluding blank lines.
pub fn tokenize_corpus<S: AsRef<str>>(policy: &Policy, corpus: &[S]) -> Vec<Vec<TokenId>> {
    corpus
        .iter()
        .map(|s| policy.vocab().tokenize(s.as_ref()).into_inner())
        .filter(|s| !s.is_empty())
        .collect()
}
