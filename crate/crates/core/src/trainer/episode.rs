use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::constraint::ConstraintSpec;
use crate::decode::DecodeParams;
use crate::engine::PromptOptimizer;
use crate::scoring::{reward, ImageBackend, ImageRef, Scorer};

/// Image generator and preference scorer used to reward an episode.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub images: &'a dyn ImageBackend,
    pub scorer: &'a dyn Scorer,
    pub image_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub original: String,
    pub optimized: String,
    pub original_image: ImageRef,
    pub optimized_image: ImageRef,
    pub reward: f64,
}

/// Decodes `prompt` under `spec`, renders both prompts and scores the pair.
pub fn run_episode(
    optimizer: &PromptOptimizer,
    prompt: &str,
    spec: &ConstraintSpec,
    params: &DecodeParams,
    backends: &Backends<'_>,
) -> Result<EpisodeOutcome, TrainError> {
    let out = optimizer.optimize_with_spec(prompt, spec, params)?;
    let x_u = out.prompt.as_str();
    let y_u = backends.images.generate(x_u, backends.image_seed)?;
    let y_o = backends.images.generate(&out.optimized_prompt, backends.image_seed)?;
    let r = reward(x_u, &y_u, &y_o, backends.scorer)?;
    Ok(EpisodeOutcome {
        original: x_u.to_string(),
        optimized: out.optimized_prompt,
        original_image: y_u,
        optimized_image: y_o,
        reward: r,
    })
}

/// [`run_episode`] over many prompts; failures carry the episode index.
pub fn run_episodes<S: AsRef<str>>(
    optimizer: &PromptOptimizer,
    prompts: &[S],
    spec: &ConstraintSpec,
    params: &DecodeParams,
    backends: &Backends<'_>,
) -> Result<Vec<EpisodeOutcome>, TrainError> {
    prompts
        .iter()
        .enumerate()
        .map(|(index, p)| {
            run_episode(optimizer, p.as_ref(), spec, params, backends).map_err(|e| {
                TrainError::Episode {
                    index,
                    source: Box::new(e),
                }
            })
        })
        .collect()
}
