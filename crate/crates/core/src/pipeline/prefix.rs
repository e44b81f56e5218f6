use std::collections::HashSet;

use crate::lm::split_words;

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.6;

/// Text before the first comma with trailing whitespace removed. Prompts
/// without a comma are returned whole.
pub fn extract_prefix(prompt: &str) -> &str {
    let head = match prompt.find(',') {
        Some(i) => &prompt[..i],
        None => prompt,
    };
    head.trim_end()
}

/// Similarity between a prefix and its full prompt, in `[0, 1]`.
pub trait Similarity: Send + Sync {
    fn similarity(&self, prefix: &str, prompt: &str) -> f64;
}

/// Jaccard index of the two word-token sets. Commas are not words.
#[derive(Clone, Copy, Debug, Default)]
pub struct TokenJaccard;

fn word_set(text: &str) -> HashSet<String> {
    split_words(text).into_iter().filter(|w| w != ",").collect()
}

impl Similarity for TokenJaccard {
    fn similarity(&self, prefix: &str, prompt: &str) -> f64 {
        let a = word_set(prefix);
        let b = word_set(prompt);
        let union = a.union(&b).count();
        if union == 0 {
            return 0.0;
        }
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// Returns `(overlap, kept)` with `kept = overlap <= threshold`.
pub fn overlap_filter(prefix: &str, prompt: &str, threshold: f64) -> (f64, bool) {
    overlap_filter_with(&TokenJaccard, prefix, prompt, threshold)
}

pub fn overlap_filter_with(
    similarity: &dyn Similarity,
    prefix: &str,
    prompt: &str,
    threshold: f64,
) -> (f64, bool) {
    let overlap = similarity.similarity(prefix, prompt);
    (overlap, overlap <= threshold)
}
