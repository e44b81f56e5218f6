//! Loading and building the language models behind the service and harness.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use nprompt_core::lm::{read_model, LanguageModel, NgramLm, TokenId, Vocabulary};
use nprompt_core::pipeline::{bundled_train_prompts, bundled_vocabulary, KeywordTaxonomy};
use nprompt_core::trainer::{train_pipeline, Backends, RunDir, TrainConfig, TrainOutcome};

use crate::config::{Config, ScoringBackends};

pub fn load_model(path: &Path) -> anyhow::Result<Arc<dyn LanguageModel>> {
    let file = File::open(path).with_context(|| format!("opening model {}", path.display()))?;
    let model = read_model(BufReader::new(file)).with_context(|| format!("reading model {}", path.display()))?;
    Ok(Arc::from(model.into_lm()))
}

/// N-gram model counted from the bundled training prompts.
pub fn bundled_ngram(order: usize, alpha: f64) -> NgramLm {
    let vocab = bundled_vocabulary();
    let corpus: Vec<Vec<TokenId>> = bundled_train_prompts()
        .iter()
        .map(|p| vocab.tokenize(p).into_inner())
        .collect();
    NgramLm::train(vocab, corpus.iter().map(Vec::as_slice), order, alpha)
}

/// The configured model file, else the bundled n-gram model.
pub fn served_model(config: &Config) -> anyhow::Result<Arc<dyn LanguageModel>> {
    match &config.model.path {
        Some(p) => load_model(p),
        None => Ok(Arc::new(bundled_ngram(config.model.ngram_order, config.model.ngram_alpha))),
    }
}

/// SFT and PPO policies for the ablation conditions.
#[derive(Clone)]
pub struct PolicyPair {
    pub sft: Arc<dyn LanguageModel>,
    pub ppo: Arc<dyn LanguageModel>,
}

impl PolicyPair {
    /// Reads `checkpoints/sft.lm` and `checkpoints/ppo.lm` from a training
    /// run directory.
    pub fn from_run_dir(dir: &Path) -> anyhow::Result<Self> {
        let ckpt = dir.join("checkpoints");
        Ok(Self {
            sft: load_model(&ckpt.join("sft.lm"))?,
            ppo: load_model(&ckpt.join("ppo.lm"))?,
        })
    }

    pub fn from_outcome(outcome: &TrainOutcome) -> Self {
        Self {
            sft: Arc::new(outcome.sft.clone()),
            ppo: Arc::new(outcome.ppo.clone()),
        }
    }
}

/// Runs SFT then PPO on `prompts` (the bundled training prompts when empty)
/// over their words plus every taxonomy keyword word.
pub fn train(
    prompts: &[String],
    taxonomy: &KeywordTaxonomy,
    config: &TrainConfig,
    backends: &ScoringBackends,
    run: Option<&mut RunDir>,
) -> anyhow::Result<TrainOutcome> {
    let prompts: Vec<String> = if prompts.is_empty() {
        bundled_train_prompts().iter().map(|s| s.to_string()).collect()
    } else {
        prompts.to_vec()
    };
    let phrases = taxonomy.all_phrases();
    let vocab = Vocabulary::from_texts(prompts.iter().chain(&phrases));
    let b = Backends {
        images: backends.images.as_ref(),
        scorer: backends.pick.as_ref(),
        image_seed: backends.image_seed,
    };
    Ok(train_pipeline(&vocab, &prompts, config, &b, run)?)
}
