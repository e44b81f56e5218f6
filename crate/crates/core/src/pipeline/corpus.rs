use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{extract_prefix, overlap_filter_with, KeywordTaxonomy, Similarity, TokenJaccard};
use crate::lm::Vocabulary;

const TRAIN: &str = include_str!("../../data/prompts_train.txt");
const EVAL: &str = include_str!("../../data/prompts_eval.txt");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub full_prompt: String,
    pub prefix: String,
    pub overlap: f64,
    pub kept: bool,
}

/// Prefix and overlap for one prompt. An empty prefix is never kept.
pub fn process_prompt(similarity: &dyn Similarity, prompt: &str, threshold: f64) -> CorpusRecord {
    let prefix = extract_prefix(prompt);
    let (overlap, kept) = overlap_filter_with(similarity, prefix, prompt, threshold);
    CorpusRecord {
        full_prompt: prompt.to_string(),
        prefix: prefix.to_string(),
        overlap,
        kept: kept && !prefix.trim().is_empty(),
    }
}

/// Processes one prompt per line, skipping blank lines.
pub fn process_corpus<R: BufRead>(
    input: R,
    similarity: &dyn Similarity,
    threshold: f64,
) -> std::io::Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        let prompt = line.trim();
        if !prompt.is_empty() {
            out.push(process_prompt(similarity, prompt, threshold));
        }
    }
    Ok(out)
}

/// Writes `full_prompt<TAB>prefix<TAB>overlap<TAB>kept` rows.
pub fn write_records<W: Write>(out: W, records: &[CorpusRecord]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .from_writer(out);
    for r in records {
        w.write_record([
            r.full_prompt.as_str(),
            r.prefix.as_str(),
            &format!("{:.6}", r.overlap),
            if r.kept { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn lines(text: &'static str) -> Vec<&'static str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// Sample training prompts shipped with the crate.
pub fn bundled_train_prompts() -> Vec<&'static str> {
    lines(TRAIN)
}

/// Held-out prompts shipped with the crate.
pub fn bundled_eval_prompts() -> Vec<&'static str> {
    lines(EVAL)
}

/// Words of the bundled training prompts followed by every taxonomy
/// keyword word.
pub fn bundled_vocabulary() -> Vocabulary {
    let taxonomy = KeywordTaxonomy::bundled();
    let phrases = taxonomy.all_phrases();
    Vocabulary::from_texts(
        bundled_train_prompts()
            .into_iter()
            .chain(phrases.iter().map(String::as_str)),
    )
}

/// Keeps the bundled training prompts that pass the default overlap filter.
pub fn bundled_training_records(threshold: f64) -> Vec<CorpusRecord> {
    bundled_train_prompts()
        .into_iter()
        .map(|p| process_prompt(&TokenJaccard, p, threshold))
        .collect()
}
