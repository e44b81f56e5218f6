//! Line-oriented model files.
//!
//! ```text
//! lmcore-v1<TAB>table<TAB>order=2
//! vocab<TAB>a boy on horse ,
//! <s><TAB>a<TAB>-0.25
//! a<TAB>boy<TAB>-1.5
//! *<TAB>a<TAB>-2.0
//! ```
//!
//! Each record is `context <TAB> token <TAB> value`. The context is the
//! space-joined context key (`*` is the default row of a table model). Table
//! models store log-probabilities or logits, where a missing entry means
//! `-inf`. N-gram models (`lmcore-v1 ngram order=N alpha=A`) store raw counts.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::{LanguageModel, LmError, NgramLm, TableLm, TokenId, Vocabulary};

pub const FORMAT_HEADER: &str = "lmcore-v1";

pub enum ModelFile {
    Table(TableLm),
    Ngram(NgramLm),
}

impl ModelFile {
    pub fn vocab(&self) -> &Vocabulary {
        match self {
            ModelFile::Table(lm) => lm.vocab(),
            ModelFile::Ngram(lm) => lm.vocab(),
        }
    }

    pub fn into_lm(self) -> Box<dyn LanguageModel> {
        match self {
            ModelFile::Table(lm) => Box::new(lm),
            ModelFile::Ngram(lm) => Box::new(lm),
        }
    }
}

fn io_err(e: std::io::Error) -> LmError {
    LmError::Io(e.to_string())
}

fn format_err(line: usize, message: impl Into<String>) -> LmError {
    LmError::Format {
        line,
        message: message.into(),
    }
}

fn join_key(vocab: &Vocabulary, key: &[TokenId]) -> String {
    key.iter()
        .map(|id| vocab.token(*id).unwrap_or(super::UNK_TOKEN))
        .collect::<Vec<_>>()
        .join(" ")
}

fn sorted_keys<V>(map: &HashMap<Vec<TokenId>, V>) -> Vec<&Vec<TokenId>> {
    let mut keys: Vec<_> = map.keys().collect();
    keys.sort();
    keys
}

fn write_vocab<W: Write>(out: &mut W, vocab: &Vocabulary) -> std::io::Result<()> {
    let words: Vec<&str> = vocab.words().collect();
    writeln!(out, "vocab\t{}", words.join(" "))
}

fn write_row<W: Write>(
    out: &mut W,
    vocab: &Vocabulary,
    context: &str,
    row: &[f64],
) -> std::io::Result<()> {
    for id in vocab.ids() {
        let value = row[id.index()];
        if vocab.is_generatable(id) && value.is_finite() {
            writeln!(out, "{context}\t{}\t{value}", vocab.token(id).unwrap())?;
        }
    }
    Ok(())
}

/// Writes explicit rows (log-probabilities or logits) as a table model.
pub fn write_table<W: Write>(
    out: &mut W,
    vocab: &Vocabulary,
    order: usize,
    rows: &HashMap<Vec<TokenId>, Vec<f64>>,
    default_row: Option<&[f64]>,
) -> Result<(), LmError> {
    writeln!(out, "{FORMAT_HEADER}\ttable\torder={order}").map_err(io_err)?;
    write_vocab(out, vocab).map_err(io_err)?;
    for key in sorted_keys(rows) {
        write_row(out, vocab, &join_key(vocab, key), &rows[key]).map_err(io_err)?;
    }
    if let Some(row) = default_row {
        write_row(out, vocab, "*", row).map_err(io_err)?;
    }
    Ok(())
}

pub fn write_ngram<W: Write>(out: &mut W, lm: &NgramLm) -> Result<(), LmError> {
    let vocab = lm.vocab();
    writeln!(
        out,
        "{FORMAT_HEADER}\tngram\torder={}\talpha={}",
        lm.order(),
        lm.alpha()
    )
    .map_err(io_err)?;
    write_vocab(out, vocab).map_err(io_err)?;
    for key in sorted_keys(lm.counts()) {
        let row = &lm.counts()[key];
        let mut tokens: Vec<_> = row.iter().collect();
        tokens.sort();
        let context = join_key(vocab, key);
        for (token, count) in tokens {
            writeln!(out, "{context}\t{}\t{count}", vocab.token(*token).unwrap()).map_err(io_err)?;
        }
    }
    Ok(())
}

enum Kind {
    Table,
    Ngram { alpha: f64 },
}

pub fn read_model<R: BufRead>(input: R) -> Result<ModelFile, LmError> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(1, "empty model file"))?;
    let header = header.map_err(io_err)?;
    let fields: Vec<&str> = header.split('\t').collect();
    if fields.first() != Some(&FORMAT_HEADER) {
        return Err(format_err(1, format!("expected `{FORMAT_HEADER}` header")));
    }
    let params: HashMap<&str, &str> = fields
        .iter()
        .skip(2)
        .filter_map(|f| f.split_once('='))
        .collect();
    let order: usize = params
        .get("order")
        .ok_or_else(|| format_err(1, "missing order"))?
        .parse()
        .map_err(|_| format_err(1, "invalid order"))?;
    let kind = match fields.get(1) {
        Some(&"table") => Kind::Table,
        Some(&"ngram") => Kind::Ngram {
            alpha: params
                .get("alpha")
                .ok_or_else(|| format_err(1, "missing alpha"))?
                .parse()
                .map_err(|_| format_err(1, "invalid alpha"))?,
        },
        other => return Err(format_err(1, format!("unknown model kind {other:?}"))),
    };

    let (line_no, vocab_line) = lines
        .next()
        .ok_or_else(|| format_err(2, "missing vocab line"))?;
    let vocab_line = vocab_line.map_err(io_err)?;
    let words = vocab_line
        .strip_prefix("vocab\t")
        .or_else(|| (vocab_line == "vocab").then_some(""))
        .ok_or_else(|| format_err(line_no, "expected `vocab` line"))?;
    let vocab = Vocabulary::new(words.split(' ').filter(|w| !w.is_empty()));

    let parse_key = |line: usize, text: &str| -> Result<Vec<TokenId>, LmError> {
        text.split(' ')
            .filter(|w| !w.is_empty())
            .map(|w| {
                vocab
                    .id(w)
                    .ok_or_else(|| format_err(line, format!("unknown context token `{w}`")))
            })
            .collect()
    };

    let mut rows: HashMap<Vec<TokenId>, Vec<f64>> = HashMap::new();
    let mut default_row: Option<Vec<f64>> = None;
    let mut counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>> = HashMap::new();
    for (line_no, line) in lines {
        let line = line.map_err(io_err)?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let [context, token, value] = parts[..] else {
            return Err(format_err(line_no, "expected `context<TAB>token<TAB>value`"));
        };
        let token = vocab
            .id(token)
            .ok_or_else(|| format_err(line_no, format!("unknown token `{token}`")))?;
        match kind {
            Kind::Table => {
                let value: f64 = value
                    .parse()
                    .map_err(|_| format_err(line_no, format!("invalid value `{value}`")))?;
                let row = if context == "*" {
                    default_row.get_or_insert_with(|| vec![f64::NEG_INFINITY; vocab.len()])
                } else {
                    rows.entry(parse_key(line_no, context)?)
                        .or_insert_with(|| vec![f64::NEG_INFINITY; vocab.len()])
                };
                row[token.index()] = value;
            }
            Kind::Ngram { .. } => {
                let count: u64 = value
                    .parse()
                    .map_err(|_| format_err(line_no, format!("invalid count `{value}`")))?;
                *counts
                    .entry(parse_key(line_no, context)?)
                    .or_default()
                    .entry(token)
                    .or_insert(0) += count;
            }
        }
    }

    match kind {
        Kind::Table => Ok(ModelFile::Table(TableLm::new(
            vocab,
            order,
            rows,
            default_row,
        )?)),
        Kind::Ngram { alpha } => {
            if order == 0 || !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(format_err(1, "invalid n-gram parameters"));
            }
            Ok(ModelFile::Ngram(NgramLm::from_counts(vocab, order, alpha, counts)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_ngram() -> NgramLm {
        let vocab = Vocabulary::new(["a", "b", "c", ","]);
        let seqs = [vocab.tokenize("a b, c"), vocab.tokenize("a c")];
        NgramLm::train(vocab, seqs.iter().map(|s| &s[..]), 2, 1.0)
    }

    #[test]
    fn ngram_round_trip() {
        let lm = toy_ngram();
        let mut buf = Vec::new();
        write_ngram(&mut buf, &lm).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("lmcore-v1\tngram\torder=2\talpha=1\n"));
        let ModelFile::Ngram(back) = read_model(&buf[..]).unwrap() else {
            panic!("expected ngram");
        };
        let ctx = lm.vocab().tokenize("a");
        assert_eq!(
            lm.next_token_log_probs(&ctx).unwrap(),
            back.next_token_log_probs(&ctx).unwrap()
        );
    }

    #[test]
    fn table_round_trip() {
        let lm = toy_ngram();
        let vocab = lm.vocab().clone();
        let mut rows = HashMap::new();
        for key in lm.counts().keys() {
            rows.insert(key.clone(), lm.row_log_probs(key));
        }
        let table = TableLm::new(vocab.clone(), 2, rows, None).unwrap();
        let mut buf = Vec::new();
        write_table(&mut buf, &vocab, 2, table.rows(), None).unwrap();
        let back = read_model(&buf[..]).unwrap().into_lm();
        for ctx in ["a", "b", ","] {
            let ctx = vocab.tokenize(ctx);
            let x = table.next_token_log_probs(&ctx).unwrap();
            let y = back.next_token_log_probs(&ctx).unwrap();
            for (p, q) in x.iter().zip(&y) {
                assert!((p - q).abs() < 1e-12 || (p.is_infinite() && q.is_infinite()));
            }
        }
    }

    #[test]
    fn rejects_bad_files() {
        assert!(read_model(&b""[..]).is_err());
        assert!(read_model(&b"lmcore-v2\ttable\torder=2\nvocab\ta\n"[..]).is_err());
        let err = read_model(&b"lmcore-v1\ttable\torder=2\nvocab\ta\nz\ta\t0\n"[..]).err();
        assert!(matches!(err, Some(LmError::Format { line: 3, .. })), "{err:?}");
        let err = read_model(&b"lmcore-v1\tngram\torder=2\talpha=1\nvocab\ta\n<s>\ta\tx\n"[..]).err();
        assert!(matches!(err, Some(LmError::Format { line: 3, .. })));
    }

    #[test]
    fn default_row_applies_to_unseen_contexts() {
        let text = "lmcore-v1\ttable\torder=2\nvocab\ta b\n*\tb\t0\n";
        let lm = read_model(text.as_bytes()).unwrap().into_lm();
        let lp = lm.next_token_log_probs(&lm.vocab().tokenize("a")).unwrap();
        assert_eq!(lp[lm.vocab().lookup("b").index()], 0.0);
        assert_eq!(lp[lm.vocab().lookup("a").index()], f64::NEG_INFINITY);
    }
}
