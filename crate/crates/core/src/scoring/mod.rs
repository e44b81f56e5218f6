//! Preference and aesthetics scoring, the reward, and image backends.

mod http;
mod stub;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

pub use http::{HttpImageBackend, HttpScorer, RetryPolicy};
pub use stub::{
    hash_noise, KeywordCounter, StubAestheticScorer, StubImageBackend, StubPreferenceScorer,
    MAX_COUNTED_KEYWORDS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRole {
    Original,
    Optimized,
}

impl std::fmt::Display for ImageRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ImageRole::Original => "original",
            ImageRole::Optimized => "optimized",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("request to {url} failed after {attempts} attempts: {message}")]
    Transport {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("{url} answered HTTP {status}")]
    Status { url: String, status: u16 },
    #[error("malformed response from {url}: {message}")]
    Decode { url: String, message: String },
    #[error("image {0:?} carries no source prompt for the stub scorer")]
    MissingSource(String),
    #[error("scoring the {role} image failed: {source}")]
    Image {
        role: ImageRole,
        #[source]
        source: Box<ScoringError>,
    },
}

/// Opaque handle to a generated image.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    /// Prompt the image was generated from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_prompt: Option<String>,
}

/// Text and image embeddings of equal dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPair {
    pub text_vec: Vec<f64>,
    pub image_vec: Vec<f64>,
}

impl EmbeddingPair {
    pub fn new(text_vec: Vec<f64>, image_vec: Vec<f64>) -> Result<Self, ScoringError> {
        if text_vec.len() != image_vec.len() {
            return Err(ScoringError::DimensionMismatch(text_vec.len(), image_vec.len()));
        }
        if text_vec.iter().chain(&image_vec).any(|x| !x.is_finite()) {
            return Err(ScoringError::NonFinite("embedding"));
        }
        Ok(Self { text_vec, image_vec })
    }
}

/// Inner product of the text and image embeddings.
pub fn pick_score(e: &EmbeddingPair) -> Result<f64, ScoringError> {
    if e.text_vec.len() != e.image_vec.len() {
        return Err(ScoringError::DimensionMismatch(e.text_vec.len(), e.image_vec.len()));
    }
    Ok(e.text_vec.iter().zip(&e.image_vec).map(|(a, b)| a * b).sum())
}

/// `exp(g_a) / (exp(g_a) + exp(g_b))`, computed stably.
pub fn preference_probability(g_a: f64, g_b: f64) -> f64 {
    let d = g_b - g_a;
    if d >= 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

/// Scores an image against a prompt.
pub trait Scorer: Send + Sync {
    fn score(&self, prompt: &str, image: &ImageRef) -> Result<f64, ScoringError>;
}

pub trait ImageBackend: Send + Sync {
    fn generate(&self, prompt: &str, seed: u64) -> Result<ImageRef, ScoringError>;
}

/// `g(x, y_o) - g(x, y_u)`.
pub fn reward(
    prompt: &str,
    original: &ImageRef,
    optimized: &ImageRef,
    scorer: &dyn Scorer,
) -> Result<f64, ScoringError> {
    let wrap = |role| move |e| ScoringError::Image {
        role,
        source: Box::new(e),
    };
    let g_o = scorer.score(prompt, optimized).map_err(wrap(ImageRole::Optimized))?;
    let g_u = scorer.score(prompt, original).map_err(wrap(ImageRole::Original))?;
    Ok(g_o - g_u)
}

/// Default cap on concurrent scorer requests.
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Runs `f` over `items` on at most `max_in_flight` threads, preserving
/// order.
pub fn map_bounded<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_in_flight.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let results = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break done;
                        }
                        done.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring worker panicked"))
            .collect::<Vec<_>>()
    });
    for (i, r) in results {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every item scored")).collect()
}

/// Scores `(prompt, image)` pairs with bounded parallelism.
pub fn score_batch(
    scorer: &dyn Scorer,
    items: &[(String, ImageRef)],
    max_in_flight: usize,
) -> Vec<Result<f64, ScoringError>> {
    map_bounded(items, max_in_flight, |(p, img)| scorer.score(p, img))
}
