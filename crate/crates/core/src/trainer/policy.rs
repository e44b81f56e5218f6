use std::collections::HashMap;
use std::path::Path;

use crate::lm::{
    check_context, context_key, read_model, write_table, LanguageModel, LmError, ModelFile,
    TableLm, TokenId, Vocabulary,
};

use super::TrainError;

/// Trainable logit table over `(context, token)` pairs.
///
/// Rows are keyed by context suffixes of up to `order - 1` tokens. A context
/// uses the row of its longest suffix that has one; the empty key is always
/// present and catches everything else. Probabilities are a softmax of the
/// row restricted to the support mask.
#[derive(Clone, Debug)]
pub struct Policy {
    vocab: Vocabulary,
    order: usize,
    support: Vec<bool>,
    rows: HashMap<Vec<TokenId>, Vec<f64>>,
}

/// Generatable tokens except UNK.
pub fn default_support(vocab: &Vocabulary) -> Vec<bool> {
    vocab
        .ids()
        .map(|id| vocab.is_generatable(id) && id != TokenId::UNK)
        .collect()
}

impl Policy {
    /// Uniform policy: one all-zero root row.
    pub fn uniform(vocab: Vocabulary, order: usize, support: Vec<bool>) -> Result<Self, TrainError> {
        let rows = HashMap::from([(vec![], vec![0.0; vocab.len()])]);
        Self::from_rows(vocab, order, support, rows)
    }

    pub fn from_rows(
        vocab: Vocabulary,
        order: usize,
        support: Vec<bool>,
        mut rows: HashMap<Vec<TokenId>, Vec<f64>>,
    ) -> Result<Self, TrainError> {
        if order == 0 {
            return Err(TrainError::Config("policy order must be at least 1".into()));
        }
        if support.len() != vocab.len() {
            return Err(TrainError::Config("support mask does not match the vocabulary".into()));
        }
        if vocab.ids().any(|id| support[id.index()] && !vocab.is_generatable(id)) {
            return Err(TrainError::Config("support contains PAD or BOS".into()));
        }
        if !support.iter().any(|s| *s) {
            return Err(TrainError::Config("support is empty".into()));
        }
        rows.entry(vec![]).or_insert_with(|| vec![0.0; vocab.len()]);
        for (key, row) in &mut rows {
            if key.len() >= order || row.len() != vocab.len() {
                return Err(TrainError::Config(format!(
                    "row of width {} for {} context tokens does not fit an order-{order} policy",
                    row.len(),
                    key.len()
                )));
            }
            for (value, &on) in row.iter_mut().zip(&support) {
                if !on {
                    *value = 0.0;
                } else if !value.is_finite() {
                    return Err(TrainError::NonFinite(format!("initial logit in row {key:?}")));
                }
            }
        }
        Ok(Self {
            vocab,
            order,
            support,
            rows,
        })
    }

    /// Reads a table model; the support is every token finite in some row.
    pub fn from_table(table: &TableLm) -> Result<Self, TrainError> {
        let vocab = table.vocab().clone();
        let mut rows = table.rows().clone();
        if let Some(default) = table.default_row() {
            rows.entry(vec![]).or_insert_with(|| default.to_vec());
        }
        let support: Vec<bool> = vocab
            .ids()
            .map(|id| vocab.is_generatable(id) && rows.values().any(|r| r[id.index()].is_finite()))
            .collect();
        Self::from_rows(vocab, table.order(), support, rows)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let file = std::fs::File::open(path).map_err(|e| TrainError::Io(e.to_string()))?;
        match read_model(std::io::BufReader::new(file))? {
            ModelFile::Table(table) => Self::from_table(&table),
            ModelFile::Ngram(_) => Err(TrainError::Config(format!(
                "{} holds count statistics, not a policy table",
                path.display()
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let file = std::fs::File::create(path).map_err(|e| TrainError::Io(e.to_string()))?;
        let mut out = std::io::BufWriter::new(file);
        let rows = self.rows.keys().map(|k| (k.clone(), self.log_probs_of(k))).collect();
        write_table(&mut out, &self.vocab, self.order, &rows, None)?;
        std::io::Write::flush(&mut out).map_err(|e| TrainError::Io(e.to_string()))
    }

    pub fn to_table(&self) -> TableLm {
        let rows = self.rows.keys().map(|k| (k.clone(), self.log_probs_of(k))).collect();
        TableLm::new(self.vocab.clone(), self.order, rows, None).expect("policy rows fit the table")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn in_support(&self, id: TokenId) -> bool {
        self.support.get(id.index()).copied().unwrap_or(false)
    }

    pub fn support_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.vocab.ids().filter(|id| self.support[id.index()])
    }

    pub fn rows(&self) -> &HashMap<Vec<TokenId>, Vec<f64>> {
        &self.rows
    }

    pub fn logits(&self, key: &[TokenId]) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    /// Sets one logit of a stored row.
    pub fn set_logit(&mut self, key: &[TokenId], token: TokenId, value: f64) -> Result<(), TrainError> {
        if !self.in_support(token) {
            return Err(TrainError::OutsideSupport(self.vocab.token(token).unwrap_or("?").to_string()));
        }
        if !value.is_finite() {
            return Err(TrainError::NonFinite("logit".into()));
        }
        let row = self
            .rows
            .get_mut(key)
            .ok_or_else(|| TrainError::Config(format!("no row for context {key:?}")))?;
        row[token.index()] = value;
        Ok(())
    }

    pub(crate) fn logits_mut(&mut self, key: &[TokenId]) -> Option<&mut Vec<f64>> {
        self.rows.get_mut(key)
    }

    /// Key of the row that governs the next token after `context`.
    pub fn resolve(&self, context: &[TokenId]) -> Vec<TokenId> {
        let full = context_key(context, self.order);
        let start = (0..=full.len())
            .find(|&s| self.rows.contains_key(&full[s..]))
            .expect("root row always present");
        full[start..].to_vec()
    }

    /// Log-softmax of a stored row over the support; `-inf` elsewhere.
    pub fn log_probs_of(&self, key: &[TokenId]) -> Vec<f64> {
        let row = &self.rows[key];
        let max = self
            .support_ids()
            .map(|id| row[id.index()])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self.support_ids().map(|id| (row[id.index()] - max).exp()).sum();
        let log_z = max + sum.ln();
        self.vocab
            .ids()
            .map(|id| {
                if self.support[id.index()] {
                    row[id.index()] - log_z
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    pub fn probs_of(&self, key: &[TokenId]) -> Vec<f64> {
        self.log_probs_of(key).into_iter().map(f64::exp).collect()
    }

    /// `KL(self || other)` for the row `key` of both policies.
    pub fn kl_row(&self, other: &Policy, key: &[TokenId]) -> f64 {
        let p = self.log_probs_of(key);
        let q = other.log_probs_of(key);
        self.support_ids()
            .map(|id| {
                let i = id.index();
                if p[i] == f64::NEG_INFINITY {
                    0.0
                } else {
                    p[i].exp() * (p[i] - q[i])
                }
            })
            .sum()
    }

    /// Largest absolute logit difference over the support, across the union
    /// of both row sets.
    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        let zero = vec![0.0; self.vocab.len()];
        self.rows
            .keys()
            .chain(other.rows.keys())
            .map(|k| {
                let a = self.rows.get(k).unwrap_or(&zero);
                let b = other.rows.get(k).unwrap_or(&zero);
                self.support_ids()
                    .map(|id| (a[id.index()] - b[id.index()]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn parameter_count(&self) -> usize {
        let width = self.support.iter().filter(|s| **s).count();
        self.rows.len() * width
    }

    pub fn is_finite(&self) -> bool {
        self.rows
            .values()
            .all(|r| self.support_ids().all(|id| r[id.index()].is_finite()))
    }
}

impl LanguageModel for Policy {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_log_probs(&self, context: &[TokenId]) -> Result<Vec<f64>, LmError> {
        check_context(&self.vocab, context, self.max_context())?;
        Ok(self.log_probs_of(&self.resolve(context)))
    }
}
