use std::collections::HashMap;

use super::{check_context, context_key, LanguageModel, LmError, TokenId, Vocabulary};

/// Count-based n-gram model with additive (Laplace) smoothing.
///
/// `P(w | h) = (c(h, w) + alpha) / (c(h) + alpha * |S|)` where `S` is the set
/// of generatable tokens. With `alpha = 0` unseen continuations get `-inf` and
/// unseen contexts fall back to uniform.
#[derive(Clone, Debug)]
pub struct NgramLm {
    vocab: Vocabulary,
    order: usize,
    alpha: f64,
    counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>>,
    totals: HashMap<Vec<TokenId>, u64>,
    max_context: usize,
}

impl NgramLm {
    /// Counts every n-gram of every sentence. Sentences are padded with
    /// `order - 1` BOS tokens and terminated by EOS.
    pub fn train<'a, I>(vocab: Vocabulary, sentences: I, order: usize, alpha: f64) -> Self
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        assert!(order >= 1, "n-gram order must be at least 1");
        assert!(alpha >= 0.0 && alpha.is_finite(), "alpha must be finite and >= 0");
        let mut counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>> = HashMap::new();
        let width = order - 1;
        for sentence in sentences {
            let mut padded = vec![TokenId::BOS; width];
            padded.extend_from_slice(sentence);
            padded.push(TokenId::EOS);
            for i in width..padded.len() {
                let key = padded[i - width..i].to_vec();
                *counts.entry(key).or_default().entry(padded[i]).or_insert(0) += 1;
            }
        }
        Self::from_counts(vocab, order, alpha, counts)
    }

    pub fn from_counts(
        vocab: Vocabulary,
        order: usize,
        alpha: f64,
        counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>>,
    ) -> Self {
        let totals = counts
            .iter()
            .map(|(k, row)| (k.clone(), row.values().sum()))
            .collect();
        Self {
            vocab,
            order,
            alpha,
            counts,
            totals,
            max_context: super::DEFAULT_MAX_CONTEXT,
        }
    }

    pub fn with_max_context(mut self, max: usize) -> Self {
        self.max_context = max;
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn count(&self, key: &[TokenId], token: TokenId) -> u64 {
        self.counts
            .get(key)
            .and_then(|row| row.get(&token))
            .copied()
            .unwrap_or(0)
    }

    pub fn context_total(&self, key: &[TokenId]) -> u64 {
        self.totals.get(key).copied().unwrap_or(0)
    }

    /// Observed contexts with their continuation counts.
    pub fn counts(&self) -> &HashMap<Vec<TokenId>, HashMap<TokenId, u64>> {
        &self.counts
    }

    /// Smoothed distribution for an already-built context key.
    pub fn row_log_probs(&self, key: &[TokenId]) -> Vec<f64> {
        let support = self.vocab.support_size() as f64;
        let total = self.context_total(key) as f64;
        let row = self.counts.get(key);
        let denom = total + self.alpha * support;
        self.vocab
            .ids()
            .map(|id| {
                if !self.vocab.is_generatable(id) {
                    return f64::NEG_INFINITY;
                }
                if denom == 0.0 {
                    return -support.ln();
                }
                let c = row.and_then(|r| r.get(&id)).copied().unwrap_or(0) as f64;
                ((c + self.alpha) / denom).ln()
            })
            .collect()
    }
}

impl LanguageModel for NgramLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn max_context(&self) -> usize {
        self.max_context
    }

    fn next_token_log_probs(&self, context: &[TokenId]) -> Result<Vec<f64>, LmError> {
        check_context(&self.vocab, context, self.max_context)?;
        Ok(self.row_log_probs(&context_key(context, self.order)))
    }
}
