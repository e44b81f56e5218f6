use std::collections::HashMap;

use super::{
    check_context, context_key, masked_log_softmax, LanguageModel, LmError, TokenId, Vocabulary,
};

/// A model given by explicit logit rows keyed by context.
///
/// Keys hold up to `order - 1` tokens. A context uses the row of its longest
/// suffix that has one, so shorter keys act as backoff rows. Rows are
/// normalized with a masked log-softmax on construction, so rows that already
/// hold log-probabilities pass through unchanged. Contexts without any
/// matching row use the default row, or the uniform distribution when no
/// default is set.
#[derive(Clone, Debug)]
pub struct TableLm {
    vocab: Vocabulary,
    order: usize,
    rows: HashMap<Vec<TokenId>, Vec<f64>>,
    default_row: Option<Vec<f64>>,
}

impl TableLm {
    pub fn new(
        vocab: Vocabulary,
        order: usize,
        rows: HashMap<Vec<TokenId>, Vec<f64>>,
        default_row: Option<Vec<f64>>,
    ) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::Format {
                line: 0,
                message: "order must be at least 1".into(),
            });
        }
        let width = order - 1;
        let normalize = |row: Vec<f64>| -> Result<Vec<f64>, LmError> {
            if row.len() != vocab.len() {
                return Err(LmError::Format {
                    line: 0,
                    message: format!("row has {} entries, vocabulary has {}", row.len(), vocab.len()),
                });
            }
            if row.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                return Err(LmError::Format {
                    line: 0,
                    message: "row contains NaN or +inf".into(),
                });
            }
            Ok(masked_log_softmax(&vocab, &row))
        };
        let mut normalized = HashMap::with_capacity(rows.len());
        for (key, row) in rows {
            if key.len() > width {
                return Err(LmError::Format {
                    line: 0,
                    message: format!("context of {} tokens for an order-{order} model", key.len()),
                });
            }
            if let Some(bad) = key.iter().find(|id| !vocab.contains_id(**id)) {
                return Err(LmError::InvalidToken(bad.0));
            }
            normalized.insert(key, normalize(row)?);
        }
        let default_row = default_row.map(normalize).transpose()?;
        Ok(Self {
            vocab,
            order,
            rows: normalized,
            default_row,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> &HashMap<Vec<TokenId>, Vec<f64>> {
        &self.rows
    }

    pub fn default_row(&self) -> Option<&[f64]> {
        self.default_row.as_deref()
    }

    /// Row of the longest stored suffix of `key`.
    pub fn row_for_key(&self, key: &[TokenId]) -> Vec<f64> {
        let stored = (0..=key.len()).find_map(|start| self.rows.get(&key[start..]));
        if let Some(row) = stored.or(self.default_row.as_ref()) {
            return row.clone();
        }
        masked_log_softmax(&self.vocab, &vec![0.0; self.vocab.len()])
    }
}

impl LanguageModel for TableLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_log_probs(&self, context: &[TokenId]) -> Result<Vec<f64>, LmError> {
        check_context(&self.vocab, context, self.max_context())?;
        Ok(self.row_for_key(&context_key(context, self.order)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_normalized() {
        let vocab = Vocabulary::new(["a", "b"]);
        let mut rows = HashMap::new();
        let mut logits = vec![0.0; vocab.len()];
        logits[vocab.lookup("a").index()] = 2.0;
        rows.insert(vec![TokenId::BOS], logits);
        let lm = TableLm::new(vocab.clone(), 2, rows, None).unwrap();
        let lp = lm.next_token_log_probs(&[]).unwrap();
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(lp[vocab.lookup("a").index()] > lp[vocab.lookup("b").index()]);
        // unseen context -> uniform over {a, b, EOS, UNK}
        let lp = lm.next_token_log_probs(&vocab.tokenize("b")).unwrap();
        assert!((lp[TokenId::EOS.index()] - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed_rows() {
        let vocab = Vocabulary::new(["a"]);
        let mut rows = HashMap::new();
        rows.insert(vec![TokenId::BOS], vec![0.0; 2]);
        assert!(TableLm::new(vocab.clone(), 2, rows, None).is_err());
        let mut rows = HashMap::new();
        rows.insert(vec![TokenId::BOS; 2], vec![0.0; vocab.len()]);
        assert!(TableLm::new(vocab, 2, rows, None).is_err());
    }

    #[test]
    fn shorter_keys_back_off() {
        let vocab = Vocabulary::new(["a", "b"]);
        let (a, b) = (vocab.lookup("a"), vocab.lookup("b"));
        let one_hot = |id: TokenId| {
            let mut row = vec![f64::NEG_INFINITY; vocab.len()];
            row[id.index()] = 0.0;
            row
        };
        let mut rows = HashMap::new();
        rows.insert(vec![a, a], one_hot(b));
        rows.insert(vec![a], one_hot(a));
        rows.insert(vec![], one_hot(TokenId::EOS));
        let lm = TableLm::new(vocab.clone(), 3, rows, None).unwrap();
        let argmax = |ctx: &str| {
            let lp = lm.next_token_log_probs(&vocab.tokenize(ctx)).unwrap();
            vocab.ids().find(|id| lp[id.index()] == 0.0).unwrap()
        };
        assert_eq!(argmax("a a"), b);
        assert_eq!(argmax("b a"), a);
        assert_eq!(argmax("a b"), TokenId::EOS);
    }
}
