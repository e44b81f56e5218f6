//! Ablation harness.
//!
//! Every condition rewrites the same prompt list; each rewritten prompt is
//! rendered to an image and scored for aesthetics and for preference over
//! the image of the bare prefix.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nprompt_core::constraint::ConstraintSpec;
use nprompt_core::decode::DecodeParams;
use nprompt_core::pipeline::{extract_prefix, KeywordTaxonomy};
use nprompt_core::scoring::{map_bounded, preference_probability, KeywordCounter, ScoringError};
use nprompt_core::{ClauseSelection, OptimizeError, PromptOptimizer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::config::ScoringBackends;
use crate::models::PolicyPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Prefix,
    Human,
    SftOnly,
    NoPpo,
    NoNeurologic,
    Full,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::Prefix,
        Condition::Human,
        Condition::SftOnly,
        Condition::NoPpo,
        Condition::NoNeurologic,
        Condition::Full,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Condition::Prefix => "prefix",
            Condition::Human => "human",
            Condition::SftOnly => "sft-only",
            Condition::NoPpo => "no-ppo",
            Condition::NoNeurologic => "no-neurologic",
            Condition::Full => "full",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::Prefix => "Original prefix",
            Condition::Human => "Original (human) prompt",
            Condition::SftOnly => "SFT only",
            Condition::NoPpo => "w/o PPO",
            Condition::NoNeurologic => "w/o constrained decoding",
            Condition::Full => "Full pipeline",
        }
    }

    /// Published full-scale aesthetics for the condition, shown for
    /// reference only.
    pub fn reference_aesthetics(self) -> f64 {
        match self {
            Condition::Prefix => 5.64,
            Condition::Human => 5.92,
            Condition::SftOnly => 6.02,
            Condition::NoPpo => 6.05,
            Condition::NoNeurologic => 6.22,
            Condition::Full => 6.27,
        }
    }

    /// `all` or a comma-separated list of keys.
    pub fn parse_list(s: &str) -> Result<Vec<Condition>, String> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        let mut out: Vec<Condition> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let c: Condition = part.parse()?;
            if !out.contains(&c) {
                out.push(c);
            }
        }
        if out.is_empty() {
            return Err("no conditions given".into());
        }
        out.sort();
        Ok(out)
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|c| c.key() == s)
            .ok_or_else(|| {
                let keys: Vec<_> = Self::ALL.iter().map(|c| c.key()).collect();
                format!("unknown condition {s:?}; expected one of {}", keys.join(", "))
            })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Pairs whose ordering the harness tests, best first.
pub const ORDERING: [Condition; 4] = [
    Condition::Full,
    Condition::NoNeurologic,
    Condition::SftOnly,
    Condition::Prefix,
];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty evaluation set")]
    EmptySet,
    #[error("requested {requested} prompts but only {available} are available")]
    TooFew { requested: usize, available: usize },
    #[error("{condition} failed on prompt {index} ({prompt:?}): {source}")]
    Optimize {
        condition: Condition,
        index: usize,
        prompt: String,
        source: OptimizeError,
    },
    #[error("scoring prompt {index}: {source}")]
    Scoring { index: usize, source: ScoringError },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n: usize,
    pub conditions: Vec<Condition>,
    /// Base seed; prompt `i` samples its clauses with `seed + i`.
    pub seed: u64,
    pub decode: DecodeParams,
    /// Extra beam widths for the full condition.
    pub beam_sweep: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n: 200,
            conditions: Condition::ALL.to_vec(),
            seed: 0,
            decode: DecodeParams::default(),
            beam_sweep: vec![4, 8, 16],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: Condition,
    pub label: String,
    pub mean_aesthetics: f64,
    pub std_aesthetics: f64,
    /// Mean preference over the prefix image, in percent.
    pub preference_pct: f64,
    pub mean_keywords: f64,
    pub aesthetics: Vec<f64>,
    pub prompts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub better: Condition,
    pub worse: Condition,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSweepRow {
    pub beam_size: usize,
    pub mean_aesthetics: f64,
    pub mean_keywords: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub n: usize,
    /// SHA-256 of the prompt list joined by newlines.
    pub prompt_set_sha256: String,
    pub results: Vec<ConditionResult>,
    pub sign_tests: Vec<SignTest>,
    pub beam_sweep: Vec<BeamSweepRow>,
}

pub fn prompt_set_hash<S: AsRef<str>>(prompts: &[S]) -> String {
    let mut h = Sha256::new();
    for (i, p) in prompts.iter().enumerate() {
        if i > 0 {
            h.update(b"\n");
        }
        h.update(p.as_ref().as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Paired one-sided sign test that `better` beats `worse`; ties are dropped.
pub fn sign_test(better: &[f64], worse: &[f64]) -> (usize, usize, usize, f64) {
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (a, b) in better.iter().zip(worse) {
        match a.partial_cmp(b) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
    }
    let n = (wins + losses) as u64;
    let p = if wins == 0 {
        1.0
    } else {
        Binomial::new(0.5, n).expect("valid binomial").sf(wins as u64 - 1)
    };
    (wins, losses, ties, p)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub struct Harness<'a> {
    pub sft: PromptOptimizer,
    pub ppo: PromptOptimizer,
    pub backends: &'a ScoringBackends,
    counter: KeywordCounter,
}

impl<'a> Harness<'a> {
    pub fn new(policies: &PolicyPair, taxonomy: &KeywordTaxonomy, backends: &'a ScoringBackends) -> Self {
        Self {
            sft: PromptOptimizer::new(Arc::clone(&policies.sft), taxonomy.clone()),
            ppo: PromptOptimizer::new(Arc::clone(&policies.ppo), taxonomy.clone()),
            backends,
            counter: KeywordCounter::new(taxonomy),
        }
    }

    /// The prompt a condition produces for eval prompt `index`.
    pub fn rewrite(
        &self,
        condition: Condition,
        index: usize,
        prompt: &str,
        opts: &EvalOptions,
        decode: &DecodeParams,
    ) -> Result<String, EvalError> {
        let selection = ClauseSelection::auto(opts.seed.wrapping_add(index as u64));
        let free = ConstraintSpec::default();
        let greedy = DecodeParams {
            beam_size: 1,
            ..decode.clone()
        };
        let out = match condition {
            Condition::Prefix => return Ok(extract_prefix(prompt).to_string()),
            Condition::Human => return Ok(prompt.to_string()),
            Condition::SftOnly => self.sft.optimize_with_spec(prompt, &free, &greedy),
            Condition::NoPpo => self.sft.optimize(prompt, &selection, decode),
            Condition::NoNeurologic => self.ppo.optimize_with_spec(prompt, &free, decode),
            Condition::Full => self.ppo.optimize(prompt, &selection, decode),
        };
        out.map(|o| o.optimized_prompt).map_err(|source| EvalError::Optimize {
            condition,
            index,
            prompt: prompt.to_string(),
            source,
        })
    }

    /// Aesthetics of each prompt's image and preference over its prefix image.
    fn score(&self, prefixes: &[String], texts: &[String]) -> Result<Vec<(f64, f64)>, EvalError> {
        let b = self.backends;
        let pairs: Vec<(&String, &String)> = prefixes.iter().zip(texts).collect();
        map_bounded(&pairs, b.max_in_flight, |(x, text)| -> Result<(f64, f64), ScoringError> {
            let y = b.images.generate(text, b.image_seed)?;
            let y_u = b.images.generate(x, b.image_seed)?;
            let aes = b.aesthetics.score(text, &y)?;
            let pref = preference_probability(b.pick.score(x, &y)?, b.pick.score(x, &y_u)?);
            Ok((aes, 100.0 * pref))
        })
        .into_iter()
        .enumerate()
        .map(|(index, r)| r.map_err(|source| EvalError::Scoring { index, source }))
        .collect()
    }

    fn run_condition(
        &self,
        condition: Condition,
        prompts: &[String],
        prefixes: &[String],
        opts: &EvalOptions,
        decode: &DecodeParams,
    ) -> Result<ConditionResult, EvalError> {
        let texts = prompts
            .iter()
            .enumerate()
            .map(|(i, p)| self.rewrite(condition, i, p, opts, decode))
            .collect::<Result<Vec<_>, _>>()?;
        let scored = self.score(prefixes, &texts)?;
        let aesthetics: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let (mean_aesthetics, std_aesthetics) = mean_std(&aesthetics);
        let n = texts.len() as f64;
        Ok(ConditionResult {
            condition,
            label: condition.label().to_string(),
            mean_aesthetics,
            std_aesthetics,
            preference_pct: scored.iter().map(|s| s.1).sum::<f64>() / n,
            mean_keywords: texts.iter().map(|t| self.counter.count(t) as f64).sum::<f64>() / n,
            aesthetics,
            prompts: texts,
        })
    }

    /// Evaluates the first `opts.n` prompts under every requested condition.
    pub fn evaluate<S: AsRef<str>>(
        &self,
        mode: &str,
        all_prompts: &[S],
        opts: &EvalOptions,
    ) -> Result<EvalReport, EvalError> {
        if opts.n == 0 || all_prompts.is_empty() {
            return Err(EvalError::EmptySet);
        }
        if opts.n > all_prompts.len() {
            return Err(EvalError::TooFew {
                requested: opts.n,
                available: all_prompts.len(),
            });
        }
        let prompts: Vec<String> = all_prompts[..opts.n].iter().map(|p| p.as_ref().to_string()).collect();
        let prefixes: Vec<String> = prompts.iter().map(|p| extract_prefix(p).to_string()).collect();
        let mut results = Vec::new();
        for &c in &opts.conditions {
            tracing::info!(condition = %c, "evaluating");
            results.push(self.run_condition(c, &prompts, &prefixes, opts, &opts.decode)?);
        }
        let find = |c: Condition| results.iter().find(|r| r.condition == c);
        let sign_tests = ORDERING
            .windows(2)
            .filter_map(|w| Some((find(w[0])?, find(w[1])?)))
            .map(|(a, b)| {
                let (wins, losses, ties, p_value) = sign_test(&a.aesthetics, &b.aesthetics);
                SignTest {
                    better: a.condition,
                    worse: b.condition,
                    wins,
                    losses,
                    ties,
                    p_value,
                }
            })
            .collect();
        let mut beam_sweep = Vec::new();
        if opts.conditions.contains(&Condition::Full) {
            for &beam_size in &opts.beam_sweep {
                let decode = DecodeParams {
                    beam_size,
                    ..opts.decode.clone()
                };
                let r = self.run_condition(Condition::Full, &prompts, &prefixes, opts, &decode)?;
                beam_sweep.push(BeamSweepRow {
                    beam_size,
                    mean_aesthetics: r.mean_aesthetics,
                    mean_keywords: r.mean_keywords,
                });
            }
        }
        Ok(EvalReport {
            mode: mode.to_string(),
            n: opts.n,
            prompt_set_sha256: prompt_set_hash(&prompts),
            results,
            sign_tests,
            beam_sweep,
        })
    }
}

impl EvalReport {
    pub fn result(&self, c: Condition) -> Option<&ConditionResult> {
        self.results.iter().find(|r| r.condition == c)
    }

    /// True when the tested conditions are strictly ordered by mean
    /// aesthetics and every sign test has `p < alpha`.
    pub fn ordering_holds(&self, alpha: f64) -> bool {
        let present: Vec<&ConditionResult> = ORDERING.iter().filter_map(|&c| self.result(c)).collect();
        present.len() == ORDERING.len()
            && present.windows(2).all(|w| w[0].mean_aesthetics > w[1].mean_aesthetics)
            && self.sign_tests.len() == ORDERING.len() - 1
            && self.sign_tests.iter().all(|t| t.p_value < alpha)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let line = "-".repeat(76);
        s.push_str(&format!("Evaluation ({} mode, {} prompts)\n{line}\n", self.mode, self.n));
        s.push_str(&format!(
            "{:<28}{:>12}{:>10}{:>14}{:>12}\n",
            "Condition", "Aesthetics", "Std", "Pref. vs pfx", "Keywords"
        ));
        s.push_str(&format!("{line}\n"));
        for r in &self.results {
            s.push_str(&format!(
                "{:<28}{:>12.3}{:>10.3}{:>13.1}%{:>12.2}\n",
                r.label, r.mean_aesthetics, r.std_aesthetics, r.preference_pct, r.mean_keywords
            ));
        }
        s.push_str(&format!("{line}\n"));
        if !self.sign_tests.is_empty() {
            s.push_str("Paired sign tests on aesthetics (one-sided, ties dropped):\n");
            for t in &self.sign_tests {
                s.push_str(&format!(
                    "  {} > {}: {} wins, {} losses, {} ties, p = {:.3e}\n",
                    t.better, t.worse, t.wins, t.losses, t.ties, t.p_value
                ));
            }
        }
        if !self.beam_sweep.is_empty() {
            s.push_str("Full pipeline by beam width:\n");
            for b in &self.beam_sweep {
                s.push_str(&format!(
                    "  beam {:>2}: aesthetics {:.3}, keywords {:.2}\n",
                    b.beam_size, b.mean_aesthetics, b.mean_keywords
                ));
            }
        }
        s.push_str(&format!("Prompt set sha256: {}\n", self.prompt_set_sha256));
        let refs: Vec<String> = Condition::ALL
            .iter()
            .map(|c| format!("{} {:.2}", c.key(), c.reference_aesthetics()))
            .collect();
        s.push_str(&format!(
            "* Reference aesthetics from the published full-scale run (not reproduced here): {}\n",
            refs.join(", ")
        ));
        s
    }
}
