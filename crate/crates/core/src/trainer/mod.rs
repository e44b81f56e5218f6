//! Supervised fine-tuning and PPO for table policies.

mod episode;
mod policy;
mod ppo;
mod run;
mod sft;

pub use episode::{run_episode, run_episodes, Backends, EpisodeOutcome};
pub use policy::{default_support, Policy};
pub use ppo::{
    ppo_objective, ppo_update, Adam, Episode, Gradient, Objective, PpoConfig, PpoTrainer,
    RewardFn, UpdateStats, ValueTable,
};
pub use run::{train_pipeline, RunDir, TrainConfig, TrainOutcome};
pub use sft::{perplexity, sft_train, tokenize_corpus, SftConfig, SftLogEntry, SftOutcome, SftTarget};

use crate::engine::OptimizeError;
use crate::lm::LmError;
use crate::scoring::ScoringError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("PPO batch is empty")]
    EmptyBatch,
    #[error("token {0:?} is outside the policy support")]
    OutsideSupport(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("episode {index}: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error("run directory i/o: {0}")]
    Io(String),
}
