//! Deterministic stand-ins for the image generator and the scorers.
//!
//! Preference: `0.2 + 0.1 * min(k, 6) + 0.02 * noise(seed, prompt)`
//! Aesthetics: `4.8 + 0.25 * c + 0.05 * noise(seed, image id)`
//!
//! `k` counts the distinct taxonomy keywords in the prompt the image was
//! generated from, `c` the taxonomy categories those keywords cover (at most
//! 6), and `noise` is a hash mapped to `[0, 1)`.

use sha2::{Digest, Sha256};

use super::{ImageBackend, ImageRef, Scorer, ScoringError};
use crate::lm::split_words;
use crate::pipeline::KeywordTaxonomy;

pub const MAX_COUNTED_KEYWORDS: usize = 6;

/// Uniform value in `[0, 1)` derived from a SHA-256 of `(seed, text)`.
pub fn hash_noise(seed: u64, text: &str) -> f64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(text.as_bytes())
        .finalize();
    let bits = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

/// Counts distinct taxonomy keywords occurring as whole-word runs.
#[derive(Clone, Debug)]
pub struct KeywordCounter {
    phrases: Vec<Vec<String>>,
    /// Category mask of each phrase.
    masks: Vec<u8>,
}

impl KeywordCounter {
    pub fn new(taxonomy: &KeywordTaxonomy) -> Self {
        let phrases = taxonomy.all_phrases();
        let masks = phrases
            .iter()
            .map(|p| {
                taxonomy
                    .iter()
                    .filter(|(c, _)| taxonomy.contains(*c, p))
                    .fold(0u8, |m, (c, _)| m | 1 << c.index())
            })
            .collect();
        Self {
            phrases: phrases.iter().map(|p| split_words(p)).collect(),
            masks,
        }
    }

    fn hits(&self, prompt: &str) -> impl Iterator<Item = usize> + '_ {
        let words = split_words(prompt);
        (0..self.phrases.len()).filter(move |&i| {
            let p = &self.phrases[i];
            words.windows(p.len()).any(|w| w == p.as_slice())
        })
    }

    pub fn count(&self, prompt: &str) -> usize {
        self.hits(prompt).count()
    }

    /// Number of categories with at least one keyword in `prompt`.
    pub fn categories(&self, prompt: &str) -> usize {
        self.hits(prompt).fold(0u8, |m, i| m | self.masks[i]).count_ones() as usize
    }

    fn source(image: &ImageRef) -> Result<&str, ScoringError> {
        image
            .source_prompt
            .as_deref()
            .ok_or_else(|| ScoringError::MissingSource(image.id.clone()))
    }
}

/// Image handles derived from a hash of `(prompt, seed)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubImageBackend;

impl ImageBackend for StubImageBackend {
    fn generate(&self, prompt: &str, seed: u64) -> Result<ImageRef, ScoringError> {
        let digest = Sha256::new()
            .chain_update(seed.to_le_bytes())
            .chain_update(prompt.as_bytes())
            .finalize();
        let id: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Ok(ImageRef {
            id: format!("stub-{id}"),
            url: None,
            source_prompt: Some(prompt.to_string()),
        })
    }
}

#[derive(Clone, Debug)]
pub struct StubPreferenceScorer {
    pub seed: u64,
    counter: KeywordCounter,
}

impl StubPreferenceScorer {
    pub fn new(taxonomy: &KeywordTaxonomy, seed: u64) -> Self {
        Self {
            seed,
            counter: KeywordCounter::new(taxonomy),
        }
    }
}

impl Scorer for StubPreferenceScorer {
    fn score(&self, prompt: &str, image: &ImageRef) -> Result<f64, ScoringError> {
        let k = self.counter.count(KeywordCounter::source(image)?).min(MAX_COUNTED_KEYWORDS) as f64;
        Ok(0.2 + 0.1 * k + 0.02 * hash_noise(self.seed, prompt))
    }
}

#[derive(Clone, Debug)]
pub struct StubAestheticScorer {
    pub seed: u64,
    counter: KeywordCounter,
}

impl StubAestheticScorer {
    pub fn new(taxonomy: &KeywordTaxonomy, seed: u64) -> Self {
        Self {
            seed,
            counter: KeywordCounter::new(taxonomy),
        }
    }
}

impl Scorer for StubAestheticScorer {
    fn score(&self, _prompt: &str, image: &ImageRef) -> Result<f64, ScoringError> {
        let c = self.counter.categories(KeywordCounter::source(image)?) as f64;
        Ok(4.8 + 0.25 * c + 0.05 * hash_noise(self.seed, &image.id))
    }
}
