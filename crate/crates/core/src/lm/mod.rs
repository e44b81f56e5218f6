//! Autoregressive language-model interface and the desk-scale models behind it.
//!
//! Every model works over a word-level [`Vocabulary`]. Log-probability vectors
//! always have one entry per vocabulary id; PAD and BOS can never be generated
//! and carry `-inf`.

mod format;
mod ngram;
mod table;
mod vocab;

use thiserror::Error;

pub use format::{read_model, write_ngram, write_table, ModelFile, FORMAT_HEADER};
pub use ngram::NgramLm;
pub use table::TableLm;
pub use vocab::{
    join_words, render_words, split_words, TokenId, TokenSequence, Vocabulary, BOS_TOKEN,
    EOS_TOKEN, PAD_TOKEN, UNK_TOKEN,
};

/// Default maximum context length accepted by the bundled models.
pub const DEFAULT_MAX_CONTEXT: usize = 512;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LmError {
    #[error("context of {len} tokens exceeds the model maximum of {max}")]
    ContextTooLong { len: usize, max: usize },
    #[error("token id {0} is not in the vocabulary")]
    InvalidToken(u32),
    #[error("sequence is empty")]
    EmptySequence,
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("model file i/o: {0}")]
    Io(String),
}

/// A conditional next-token distribution over a fixed vocabulary.
///
/// Implementations are immutable once built; `next_token_log_probs` must be a
/// pure function of the context.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn max_context(&self) -> usize {
        DEFAULT_MAX_CONTEXT
    }

    /// Log-probabilities of every vocabulary id following `context`. A leading
    /// BOS in `context` is optional; the start of the sequence is implied.
    fn next_token_log_probs(&self, context: &[TokenId]) -> Result<Vec<f64>, LmError>;

    /// Sum over positions of the log-probability of each realized token given
    /// everything before it. A leading BOS contributes nothing.
    fn sequence_log_prob(&self, seq: &[TokenId]) -> Result<f64, LmError> {
        if seq.is_empty() {
            return Err(LmError::EmptySequence);
        }
        let start = usize::from(seq[0] == TokenId::BOS);
        let mut total = 0.0;
        for i in start..seq.len() {
            let lp = self.next_token_log_probs(&seq[..i])?;
            total += lp[checked_index(self.vocab(), seq[i])?];
        }
        Ok(total)
    }

    /// Log-probability of `continuation` given `prefix`.
    fn continuation_log_prob(
        &self,
        prefix: &[TokenId],
        continuation: &[TokenId],
    ) -> Result<f64, LmError> {
        let mut context = prefix.to_vec();
        let mut total = 0.0;
        for &token in continuation {
            let lp = self.next_token_log_probs(&context)?;
            total += lp[checked_index(self.vocab(), token)?];
            context.push(token);
        }
        Ok(total)
    }
}

fn checked_index(vocab: &Vocabulary, id: TokenId) -> Result<usize, LmError> {
    if vocab.contains_id(id) {
        Ok(id.index())
    } else {
        Err(LmError::InvalidToken(id.0))
    }
}

/// Validates a context against the vocabulary and a length limit.
pub fn check_context(vocab: &Vocabulary, context: &[TokenId], max: usize) -> Result<(), LmError> {
    if context.len() > max {
        return Err(LmError::ContextTooLong {
            len: context.len(),
            max,
        });
    }
    match context.iter().find(|id| !vocab.contains_id(**id)) {
        Some(bad) => Err(LmError::InvalidToken(bad.0)),
        None => Ok(()),
    }
}

/// The last `order - 1` tokens of `context`, left-padded with BOS. A leading
/// BOS in the context itself is ignored.
pub fn context_key(context: &[TokenId], order: usize) -> Vec<TokenId> {
    let width = order.saturating_sub(1);
    let body = match context.first() {
        Some(&TokenId::BOS) => &context[1..],
        _ => context,
    };
    let take = body.len().min(width);
    let mut key = vec![TokenId::BOS; width - take];
    key.extend_from_slice(&body[body.len() - take..]);
    key
}

/// Log-softmax over the generatable ids of `vocab`; all other entries become
/// `-inf`. Entries already `-inf` stay masked.
pub fn masked_log_softmax(vocab: &Vocabulary, logits: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for id in vocab.ids() {
        if vocab.is_generatable(id) {
            max = max.max(logits[id.index()]);
        }
    }
    let mut out = vec![f64::NEG_INFINITY; logits.len()];
    if max == f64::NEG_INFINITY {
        return out;
    }
    let mut sum = 0.0;
    for id in vocab.ids() {
        if vocab.is_generatable(id) {
            sum += (logits[id.index()] - max).exp();
        }
    }
    let log_z = max + sum.ln();
    for id in vocab.ids() {
        if vocab.is_generatable(id) {
            out[id.index()] = logits[id.index()] - log_z;
        }
    }
    out
}

/// Uniform distribution over the generatable tokens.
#[derive(Clone, Debug)]
pub struct UniformLm {
    vocab: Vocabulary,
}

impl UniformLm {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl LanguageModel for UniformLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_log_probs(&self, context: &[TokenId]) -> Result<Vec<f64>, LmError> {
        check_context(&self.vocab, context, self.max_context())?;
        let lp = -(self.vocab.support_size() as f64).ln();
        Ok(self
            .vocab
            .ids()
            .map(|id| {
                if self.vocab.is_generatable(id) {
                    lp
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect())
    }
}
