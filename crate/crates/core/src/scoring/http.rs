//! JSON-over-HTTP clients for remote image generation and scoring.
//!
//! Image backend: `POST {prompt, seed, steps}` answers `{image_id, url}`.
//! Scorer: `POST {prompt, image_id}` answers `{score}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{ImageBackend, ImageRef, Scorer, ScoringError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 200,
            timeout_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    fn agent(&self) -> Agent {
        Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(self.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into()
    }

    /// Delay before retry `n` (1-based): `base * 2^(n-1)`.
    pub fn delay(&self, n: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << (n - 1).min(16)))
    }
}

fn post_json<B: Serialize, T: for<'de> Deserialize<'de>>(
    agent: &Agent,
    url: &str,
    retry: &RetryPolicy,
    body: &B,
) -> Result<T, ScoringError> {
    let attempts = retry.attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        if attempt > 1 {
            std::thread::sleep(retry.delay(attempt - 1));
        }
        match agent.post(url).send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if resp.status().is_success() {
                    return resp.body_mut().read_json::<T>().map_err(|e| ScoringError::Decode {
                        url: url.to_string(),
                        message: e.to_string(),
                    });
                }
                if status < 500 && status != 429 {
                    return Err(ScoringError::Status {
                        url: url.to_string(),
                        status,
                    });
                }
                last = format!("HTTP {status}");
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(ScoringError::Transport {
        url: url.to_string(),
        attempts,
        message: last,
    })
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    seed: u64,
    steps: u32,
}

#[derive(Deserialize)]
struct GenerateResponse {
    image_id: String,
    #[serde(default)]
    url: Option<String>,
}

#[derive(Clone, Debug)]
pub struct HttpImageBackend {
    url: String,
    steps: u32,
    retry: RetryPolicy,
    agent: Agent,
}

impl HttpImageBackend {
    pub fn new(url: impl Into<String>, steps: u32, retry: RetryPolicy) -> Self {
        Self {
            agent: retry.agent(),
            url: url.into(),
            steps,
            retry,
        }
    }
}

impl ImageBackend for HttpImageBackend {
    fn generate(&self, prompt: &str, seed: u64) -> Result<ImageRef, ScoringError> {
        let body = GenerateRequest {
            prompt,
            seed,
            steps: self.steps,
        };
        let resp: GenerateResponse = post_json(&self.agent, &self.url, &self.retry, &body)?;
        Ok(ImageRef {
            id: resp.image_id,
            url: resp.url,
            source_prompt: Some(prompt.to_string()),
        })
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    image_id: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

#[derive(Clone, Debug)]
pub struct HttpScorer {
    url: String,
    retry: RetryPolicy,
    agent: Agent,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, retry: RetryPolicy) -> Self {
        Self {
            agent: retry.agent(),
            url: url.into(),
            retry,
        }
    }
}

impl Scorer for HttpScorer {
    fn score(&self, prompt: &str, image: &ImageRef) -> Result<f64, ScoringError> {
        let body = ScoreRequest {
            prompt,
            image_id: &image.id,
        };
        let resp: ScoreResponse = post_json(&self.agent, &self.url, &self.retry, &body)?;
        if !resp.score.is_finite() {
            return Err(ScoringError::NonFinite("remote score"));
        }
        Ok(resp.score)
    }
}
