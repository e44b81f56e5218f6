//! Command-line front end.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nprompt_core::pipeline::{
    bundled_eval_prompts, process_corpus, write_records, Category, CategorySelection, TokenJaccard,
    DEFAULT_OVERLAP_THRESHOLD,
};
use nprompt_core::trainer::{RunDir, TrainConfig};
use nprompt_core::{ClauseSelection, PromptOptimizer};

use crate::config::{Config, Mode};
use crate::eval::{Condition, EvalError, EvalOptions, Harness};
use crate::models::{served_model, train, PolicyPair};
use crate::records::RecordStore;
use crate::service::{serve, AppState};

#[derive(Debug, Parser)]
#[command(name = "nprompt", version, about = "Constrained prompt optimization for text-to-image models")]
pub struct Cli {
    /// TOML config file; NPROMPT_* variables override it.
    #[arg(long, global = true, env = "NPROMPT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seed for keyword sampling and decoding.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// stub or live backends.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// Beam width.
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    /// Weight of the satisfied-clause fraction in the beam score.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Optimize one prompt.
    Optimize(OptimizeArgs),
    /// Run the ablation harness.
    Evaluate(EvaluateArgs),
    /// Supervised fine-tuning followed by PPO.
    Train(TrainArgs),
    /// Extract prefixes and overlap scores from a prompt file.
    Prepare(PrepareArgs),
    /// Re-run every record in a log and compare the optimized prompts.
    Replay {
        #[arg(long)]
        records: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    pub prompt: String,
    /// `auto`, `none`, or comma-separated keywords; likewise for the other
    /// categories.
    #[arg(long)]
    pub style: Option<String>,
    #[arg(long)]
    pub artist: Option<String>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub booster: Option<String>,
    #[arg(long)]
    pub vibe: Option<String>,
    #[arg(long)]
    pub perspective: Option<String>,
    /// Phrase that must not appear; repeatable.
    #[arg(long = "negative")]
    pub negative: Vec<String>,
    #[arg(long)]
    pub allow_custom: bool,
    /// Model file to decode with instead of the configured one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    /// Print the full result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// `all` or a comma-separated subset of prefix, human, sft-only, no-ppo,
    /// no-neurologic, full.
    #[arg(long, default_value = "all")]
    pub conditions: String,
    /// Training run directory holding checkpoints/sft.lm and ppo.lm. Without
    /// it, stub mode trains the desk preset in-process.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// One prompt per line; defaults to the bundled evaluation prompts.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Skip the beam-width sweep of the full condition.
    #[arg(long)]
    pub no_sweep: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// desk or full.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long)]
    pub out: PathBuf,
    /// One prompt per line; defaults to the bundled training prompts.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub sft_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    pub input: PathBuf,
    /// Tab-separated output; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_OVERLAP_THRESHOLD)]
    pub threshold: f64,
}

impl Cli {
    /// Config file, environment, then command-line flags.
    pub fn resolve_config(&self) -> anyhow::Result<Config> {
        let mut cfg = Config::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(beam) = self.beam {
            cfg.decode.beam_size = beam;
        }
        if let Some(lambda) = self.lambda {
            cfg.decode.satisfaction_weight = lambda;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_prompts(path: &PathBuf) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn category_selection(raw: &Option<String>) -> CategorySelection {
    match raw.as_deref().map(str::trim) {
        None | Some("auto") => CategorySelection::Auto,
        Some("none") => CategorySelection::Keywords(vec![]),
        Some(list) => CategorySelection::Keywords(
            list.split(',').map(str::trim).filter(|k| !k.is_empty()).map(String::from).collect(),
        ),
    }
}

impl OptimizeArgs {
    pub fn selection(&self, seed: u64) -> ClauseSelection {
        let mut sel = ClauseSelection::auto(seed);
        for (category, raw) in [
            (Category::Style, &self.style),
            (Category::Artist, &self.artist),
            (Category::Format, &self.format),
            (Category::Booster, &self.booster),
            (Category::Vibe, &self.vibe),
            (Category::Perspective, &self.perspective),
        ] {
            *sel.get_mut(category) = category_selection(raw);
        }
        sel.negative_phrases = self.negative.clone();
        sel.allow_custom = self.allow_custom;
        sel
    }
}

/// Executes a parsed command, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let cfg = cli.resolve_config()?;
    match cli.command {
        Command::Serve { host, port } => {
            let taxonomy = cfg.taxonomy()?;
            let backends = cfg.scoring_backends(&taxonomy)?;
            let optimizer = PromptOptimizer::new(served_model(&cfg)?, taxonomy);
            let records = RecordStore::open(&cfg.records)?;
            let addr = format!(
                "{}:{}",
                host.unwrap_or_else(|| cfg.server.host.clone()),
                port.unwrap_or(cfg.server.port)
            );
            let state = Arc::new(AppState::new(optimizer, backends, records, cfg.seed, cfg.decode.clone()));
            tokio::runtime::Runtime::new()?.block_on(serve(state, &addr))
        }
        Command::Optimize(args) => {
            let taxonomy = cfg.taxonomy()?;
            let lm = match &args.model {
                Some(p) => crate::models::load_model(p)?,
                None => served_model(&cfg)?,
            };
            let optimizer = PromptOptimizer::new(lm, taxonomy);
            let mut params = cfg.decode.clone();
            params.seed = cfg.seed;
            if let Some(m) = args.max_new_tokens {
                params.max_new_tokens = m;
            }
            let result = optimizer.optimize(&args.prompt, &args.selection(cfg.seed), &params)?;
            if args.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&result)?)?;
            } else {
                writeln!(out, "{}", result.optimized_prompt)?;
                for c in &result.clause_status {
                    writeln!(
                        out,
                        "  {}: {:?}, {} matched from {}",
                        c.label.as_deref().unwrap_or("clause"),
                        c.status,
                        c.count,
                        c.phrases.join(" | ")
                    )?;
                }
            }
            Ok(())
        }
        Command::Evaluate(args) => {
            let conditions = Condition::parse_list(&args.conditions).map_err(anyhow::Error::msg)?;
            if args.n == 0 {
                return Err(EvalError::EmptySet.into());
            }
            let prompts = match &args.prompts {
                Some(p) => read_prompts(p)?,
                None => bundled_eval_prompts().iter().map(|s| s.to_string()).collect(),
            };
            if prompts.is_empty() {
                return Err(EvalError::EmptySet.into());
            }
            let taxonomy = cfg.taxonomy()?;
            let backends = cfg.scoring_backends(&taxonomy)?;
            let policies = match (&args.run_dir, cfg.mode) {
                (Some(dir), _) => PolicyPair::from_run_dir(dir)?,
                (None, Mode::Live) => bail!("live mode requires trained policies; pass --run-dir"),
                (None, Mode::Stub) => {
                    tracing::info!("training desk policies in-process");
                    let mut preset = TrainConfig::desk();
                    preset.image_seed = cfg.seed;
                    preset.ppo.seed = cfg.seed;
                    PolicyPair::from_outcome(&train(&[], &taxonomy, &preset, &backends, None)?)
                }
            };
            let opts = EvalOptions {
                n: args.n,
                conditions,
                seed: cfg.seed,
                decode: cfg.decode.clone(),
                beam_sweep: if args.no_sweep { vec![] } else { EvalOptions::default().beam_sweep },
            };
            let report = Harness::new(&policies, &taxonomy, &backends).evaluate(&cfg.mode.to_string(), &prompts, &opts)?;
            write!(out, "{}", report.render())?;
            if let Some(path) = &args.json {
                std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::Train(args) => {
            let Some(mut preset) = TrainConfig::preset(&args.preset) else {
                bail!("unknown preset {:?}; expected desk or full", args.preset);
            };
            preset.image_seed = cfg.seed;
            preset.ppo.seed = cfg.seed;
            if let Some(e) = args.episodes {
                preset.ppo.episodes = e;
            }
            if let Some(s) = args.sft_steps {
                preset.sft.steps = s;
            }
            let prompts = match &args.prompts {
                Some(p) => read_prompts(p)?,
                None => vec![],
            };
            let taxonomy = cfg.taxonomy()?;
            let backends = cfg.scoring_backends(&taxonomy)?;
            let mut run_dir = RunDir::create(&args.out, &preset)?;
            let outcome = train(&prompts, &taxonomy, &preset, &backends, Some(&mut run_dir))?;
            let last = outcome.ppo_stats.last();
            writeln!(
                out,
                "trained on {} PPO prompts over {} updates; final mean reward {:.4}, KL {:.4}",
                outcome.rl_prompts,
                outcome.ppo_stats.len(),
                last.map_or(f64::NAN, |s| s.mean_reward),
                last.map_or(f64::NAN, |s| s.kl),
            )?;
            writeln!(out, "checkpoints in {}", run_dir.root().join("checkpoints").display())?;
            Ok(())
        }
        Command::Prepare(args) => {
            let file = std::fs::File::open(&args.input)
                .with_context(|| format!("opening {}", args.input.display()))?;
            let records = process_corpus(std::io::BufReader::new(file), &TokenJaccard, args.threshold)?;
            let kept = records.iter().filter(|r| r.kept).count();
            match &args.output {
                Some(path) => {
                    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
                    write_records(std::io::BufWriter::new(f), &records)?;
                    writeln!(out, "{} prompts, {} kept", records.len(), kept)?;
                }
                None => write_records(&mut *out, &records)?,
            }
            Ok(())
        }
        Command::Replay { records } => {
            let path = records.unwrap_or_else(|| cfg.records.clone());
            let log = RecordStore::open(&path)?;
            let optimizer = PromptOptimizer::new(served_model(&cfg)?, cfg.taxonomy()?);
            let mut mismatches = 0;
            for record in log.all() {
                let replayed = record.replay(&optimizer);
                let ok = matches!(&replayed, Ok(p) if *p == record.optimized_prompt);
                mismatches += usize::from(!ok);
                writeln!(out, "{} {}", record.id, if ok { "ok" } else { "MISMATCH" })?;
            }
            if mismatches > 0 {
                bail!("{mismatches} of {} records did not replay", log.len());
            }
            Ok(())
        }
    }
}
