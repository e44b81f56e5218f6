use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    default_support, sft_train, Backends, Policy, PpoConfig, PpoTrainer, SftConfig, SftLogEntry,
    TrainError, UpdateStats,
};
use crate::lm::{TokenId, Vocabulary};
use crate::pipeline::{process_prompt, TokenJaccard, DEFAULT_OVERLAP_THRESHOLD};
use crate::scoring::reward;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sft: SftConfig,
    pub ppo: PpoConfig,
    /// Prompts whose prefix overlaps the full prompt more than this are
    /// skipped for PPO.
    pub overlap_threshold: f64,
    /// Every n-th prompt is held out of SFT for perplexity; 0 holds out none.
    pub heldout_every: usize,
    pub image_seed: u64,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            sft: SftConfig::desk(),
            ppo: PpoConfig::desk(),
            overlap_threshold: DEFAULT_OVERLAP_THRESHOLD,
            heldout_every: 20,
            image_seed: 0,
        }
    }

    pub fn full() -> Self {
        Self {
            sft: SftConfig::full(),
            ppo: PpoConfig::full(),
            ..Self::desk()
        }
    }

    /// `desk` or `full`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "full" => Some(Self::full()),
            _ => None,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Serialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
enum StatsRecord<'a> {
    Sft(&'a SftLogEntry),
    Ppo(&'a UpdateStats),
}

/// Training output directory: `config.json`, `stats.jsonl` and
/// `checkpoints/*.lm`.
pub struct RunDir {
    root: PathBuf,
    stats: BufWriter<File>,
}

impl RunDir {
    pub fn create(root: impl AsRef<Path>, config: &TrainConfig) -> Result<Self, TrainError> {
        let root = root.as_ref().to_path_buf();
        let io = |e: std::io::Error| TrainError::Io(e.to_string());
        fs::create_dir_all(root.join("checkpoints")).map_err(io)?;
        let snapshot = serde_json::to_string_pretty(config).expect("config serializes");
        fs::write(root.join("config.json"), snapshot + "\n").map_err(io)?;
        let stats = BufWriter::new(File::create(root.join("stats.jsonl")).map_err(io)?);
        Ok(Self { root, stats })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.lm"))
    }

    fn record(&mut self, record: StatsRecord<'_>) -> Result<(), TrainError> {
        let line = serde_json::to_string(&record).expect("stats serialize");
        writeln!(self.stats, "{line}")
            .and_then(|_| self.stats.flush())
            .map_err(|e| TrainError::Io(e.to_string()))
    }

    pub fn log_sft(&mut self, entry: &SftLogEntry) -> Result<(), TrainError> {
        self.record(StatsRecord::Sft(entry))
    }

    pub fn log_ppo(&mut self, stats: &UpdateStats) -> Result<(), TrainError> {
        self.record(StatsRecord::Ppo(stats))
    }

    pub fn checkpoint(&self, name: &str, policy: &Policy) -> Result<PathBuf, TrainError> {
        let path = self.checkpoint_path(name);
        policy.save(&path)?;
        Ok(path)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub sft: Policy,
    pub ppo: Policy,
    pub sft_log: Vec<SftLogEntry>,
    pub ppo_stats: Vec<UpdateStats>,
    pub rl_prompts: usize,
}

/// SFT on full prompts, then PPO on the prefixes that pass the overlap
/// filter. The reward of a sampled continuation compares images of the
/// prefix and of the prefix plus continuation.
pub fn train_pipeline<S: AsRef<str>>(
    vocab: &Vocabulary,
    prompts: &[S],
    config: &TrainConfig,
    backends: &Backends<'_>,
    mut run: Option<&mut RunDir>,
) -> Result<TrainOutcome, TrainError> {
    let (mut corpus, mut heldout) = (Vec::new(), Vec::new());
    let mut rl_prompts = Vec::new();
    for (i, p) in prompts.iter().enumerate() {
        let text = p.as_ref();
        let tokens = vocab.tokenize(text).into_inner();
        if tokens.is_empty() {
            continue;
        }
        if config.heldout_every > 0 && i % config.heldout_every == config.heldout_every - 1 {
            heldout.push(tokens);
            continue;
        }
        corpus.push(tokens);
        let rec = process_prompt(&TokenJaccard, text, config.overlap_threshold);
        if rec.kept {
            rl_prompts.push(vocab.tokenize(&rec.prefix).into_inner());
        }
    }
    let initial = Policy::uniform(vocab.clone(), config.sft.order, default_support(vocab))?;
    let sft = sft_train(&initial, &corpus, &heldout, &config.sft)?;
    if let Some(run) = run.as_deref_mut() {
        for entry in &sft.log {
            run.log_sft(entry)?;
        }
        run.checkpoint("sft", &sft.policy)?;
    }
    if rl_prompts.is_empty() {
        return Err(TrainError::Config("no prompt passes the overlap filter for PPO".into()));
    }

    let reward_fn = |prefix: &[TokenId], actions: &[TokenId]| -> Result<f64, TrainError> {
        let words: Vec<TokenId> = actions.iter().copied().filter(|t| *t != TokenId::EOS).collect();
        let x_u = vocab.detokenize(prefix);
        let x_o = vocab.detokenize(&[prefix, &words].concat());
        let y_u = backends.images.generate(&x_u, backends.image_seed)?;
        let y_o = backends.images.generate(&x_o, backends.image_seed)?;
        Ok(reward(&x_u, &y_u, &y_o, backends.scorer)?)
    };
    let mut trainer = PpoTrainer::new(sft.policy.clone(), config.ppo.clone())?;
    let ppo_stats = trainer.train(&rl_prompts, &reward_fn, |stats, _| match run.as_deref_mut() {
        Some(run) => run.log_ppo(stats),
        None => Ok(()),
    })?;
    let ppo = trainer.into_policy();
    if let Some(run) = run {
        run.checkpoint("ppo", &ppo)?;
    }
    Ok(TrainOutcome {
        sft: sft.policy,
        ppo,
        sft_log: sft.log,
        ppo_stats,
        rl_prompts: rl_prompts.len(),
    })
}
