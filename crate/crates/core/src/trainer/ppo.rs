//! Clipped-surrogate PPO for [`Policy`] tables.
//!
//! Per-token reward: `r_t = -kl_coef * (log pi_old(a_t|s_t) - log pi_ref(a_t|s_t))`,
//! plus the episode reward `R` on the final token. Returns-to-go `G_t` are
//! undiscounted and the advantage is `A_t = G_t - V_old(s_t)`. The loss over
//! the tokens of a minibatch is
//!
//! `mean_t[-min(rho_t A_t, clip(rho_t, 1-eps, 1+eps) A_t)] + value_loss_coef * mean_t[(V(s_t) - G_t)^2 / 2]`
//!
//! with `rho_t = pi(a_t|s_t) / pi_old(a_t|s_t)`. Parameters are updated with
//! Adam, touching only rows that received a gradient.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Policy, TrainError};
use crate::lm::{LanguageModel, TokenId};
use crate::scoring::{map_bounded, DEFAULT_MAX_IN_FLIGHT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub ppo_epochs: usize,
    pub learning_rate: f64,
    pub value_loss_coef: f64,
    pub kl_coef: f64,
    pub clip_ratio: f64,
    pub seed: u64,
    /// Rollout length cap; episodes that hit it end without EOS.
    pub max_new_tokens: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl PpoConfig {
    pub fn full() -> Self {
        Self {
            episodes: 10_000,
            batch_size: 128,
            minibatch_size: 1,
            ppo_epochs: 4,
            learning_rate: 5e-5,
            value_loss_coef: 0.1,
            kl_coef: 0.2,
            clip_ratio: 0.2,
            seed: 0,
            max_new_tokens: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    pub fn desk() -> Self {
        Self {
            episodes: 8_000,
            batch_size: 32,
            minibatch_size: 32,
            learning_rate: 0.05,
            kl_coef: 0.05,
            max_new_tokens: 12,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let counts = [
            ("episodes", self.episodes),
            ("batch_size", self.batch_size),
            ("minibatch_size", self.minibatch_size),
            ("ppo_epochs", self.ppo_epochs),
            ("max_new_tokens", self.max_new_tokens),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("PPO {name} must be positive")));
        }
        if self.minibatch_size > self.batch_size {
            return Err(TrainError::Config("PPO minibatch_size exceeds batch_size".into()));
        }
        let scalars = [
            ("learning_rate", self.learning_rate),
            ("value_loss_coef", self.value_loss_coef),
            ("kl_coef", self.kl_coef),
            ("clip_ratio", self.clip_ratio),
            ("adam_eps", self.adam_eps),
        ];
        if let Some((name, _)) = scalars.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(TrainError::Config(format!("PPO {name} must be finite and non-negative")));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(TrainError::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// One rollout with everything frozen at collection time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub prefix: Vec<TokenId>,
    pub actions: Vec<TokenId>,
    pub reward: f64,
    /// Policy row key governing each action.
    pub keys: Vec<Vec<TokenId>>,
    pub old_log_probs: Vec<f64>,
    pub ref_log_probs: Vec<f64>,
    pub old_values: Vec<f64>,
}

impl Episode {
    pub fn token_rewards(&self, kl_coef: f64) -> Vec<f64> {
        let mut r: Vec<f64> = self
            .old_log_probs
            .iter()
            .zip(&self.ref_log_probs)
            .map(|(o, q)| -kl_coef * (o - q))
            .collect();
        if let Some(last) = r.last_mut() {
            *last += self.reward;
        }
        r
    }

    pub fn returns(&self, kl_coef: f64) -> Vec<f64> {
        let mut g = self.token_rewards(kl_coef);
        for t in (0..g.len().saturating_sub(1)).rev() {
            g[t] += g[t + 1];
        }
        g
    }

    pub fn advantages(&self, kl_coef: f64) -> Vec<f64> {
        self.returns(kl_coef)
            .iter()
            .zip(&self.old_values)
            .map(|(g, v)| g - v)
            .collect()
    }

    /// Sampled KL estimate `sum_t log pi_old - log pi_ref`.
    pub fn kl(&self) -> f64 {
        self.old_log_probs
            .iter()
            .zip(&self.ref_log_probs)
            .map(|(o, q)| o - q)
            .sum()
    }
}

/// Scalar baseline per policy row key; missing keys read as zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValueTable {
    values: HashMap<Vec<TokenId>, f64>,
}

impl ValueTable {
    pub fn get(&self, key: &[TokenId]) -> f64 {
        self.values.get(key).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, key: Vec<TokenId>, value: f64) {
        self.values.insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Gradient of the loss with respect to policy logits and values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradient {
    pub policy: HashMap<Vec<TokenId>, Vec<f64>>,
    pub value: HashMap<Vec<TokenId>, f64>,
}

impl Gradient {
    fn first_non_finite(&self) -> Option<String> {
        for (key, row) in &self.policy {
            if let Some(i) = row.iter().position(|g| !g.is_finite()) {
                return Some(format!("policy row {key:?}, token {i}: {}", row[i]));
            }
        }
        self.value
            .iter()
            .find(|(_, g)| !g.is_finite())
            .map(|(key, g)| format!("value {key:?}: {g}"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Objective {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub tokens: usize,
    pub clipped: usize,
}

impl Objective {
    pub fn total(&self) -> f64 {
        self.policy_loss + self.value_loss
    }
}

/// Loss and analytic gradient over the tokens of `episodes`.
pub fn ppo_objective(
    policy: &Policy,
    values: &ValueTable,
    episodes: &[&Episode],
    config: &PpoConfig,
) -> (Objective, Gradient) {
    let n: usize = episodes.iter().map(|e| e.actions.len()).sum();
    let mut obj = Objective {
        tokens: n,
        ..Objective::default()
    };
    let mut grad = Gradient::default();
    if n == 0 {
        return (obj, grad);
    }
    let inv_n = 1.0 / n as f64;
    let eps = config.clip_ratio;
    let mut probs: HashMap<&[TokenId], Vec<f64>> = HashMap::new();
    for ep in episodes {
        let returns = ep.returns(config.kl_coef);
        for (t, action) in ep.actions.iter().enumerate() {
            let key = ep.keys[t].as_slice();
            let a = action.index();
            let p = probs.entry(key).or_insert_with(|| policy.probs_of(key));
            let adv = returns[t] - ep.old_values[t];
            let rho = (p[a].ln() - ep.old_log_probs[t]).exp();
            let clipped = rho.clamp(1.0 - eps, 1.0 + eps);
            let (un, cl) = (rho * adv, clipped * adv);
            if un <= cl {
                obj.policy_loss -= un * inv_n;
                let row = grad
                    .policy
                    .entry(key.to_vec())
                    .or_insert_with(|| vec![0.0; p.len()]);
                let scale = -adv * rho * inv_n;
                for (j, pj) in p.iter().enumerate() {
                    if policy.support()[j] {
                        row[j] -= scale * pj;
                    }
                }
                row[a] += scale;
            } else {
                obj.policy_loss -= cl * inv_n;
                obj.clipped += 1;
            }
            let v = values.get(key);
            obj.value_loss += config.value_loss_coef * 0.5 * (v - returns[t]).powi(2) * inv_n;
            *grad.value.entry(key.to_vec()).or_default() +=
                config.value_loss_coef * (v - returns[t]) * inv_n;
        }
    }
    (obj, grad)
}

/// Adam that only advances the moments of parameters with a gradient.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    t: u64,
    policy: HashMap<Vec<TokenId>, (Vec<f64>, Vec<f64>)>,
    value: HashMap<Vec<TokenId>, (f64, f64)>,
}

impl Adam {
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(
        &mut self,
        policy: &mut Policy,
        values: &mut ValueTable,
        grad: &Gradient,
        config: &PpoConfig,
    ) {
        self.t += 1;
        let (b1, b2) = (config.adam_beta1, config.adam_beta2);
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        let update = |m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            config.learning_rate * (*m / c1) / ((*v / c2).sqrt() + config.adam_eps)
        };
        let support = policy.support().to_vec();
        for (key, g) in &grad.policy {
            let (m, v) = self
                .policy
                .entry(key.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let row = policy.logits_mut(key).expect("gradient rows exist in the policy");
            for i in 0..g.len() {
                if support[i] {
                    row[i] -= update(&mut m[i], &mut v[i], g[i]);
                }
            }
        }
        for (key, g) in &grad.value {
            let (m, v) = self.value.entry(key.clone()).or_default();
            let delta = update(m, v, *g);
            let cur = values.get(key);
            values.set(key.clone(), cur - delta);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: usize,
    pub episodes: usize,
    pub mean_reward: f64,
    /// Mean per-episode sampled KL to the reference policy.
    pub kl: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_length: f64,
}

/// Runs `ppo_epochs` passes of shuffled minibatch updates over `episodes`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    policy: &mut Policy,
    values: &mut ValueTable,
    adam: &mut Adam,
    episodes: &[Episode],
    config: &PpoConfig,
    rng: &mut impl Rng,
    update: usize,
) -> Result<UpdateStats, TrainError> {
    config.validate()?;
    if episodes.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let (mut clipped, mut evaluated) = (0usize, 0usize);
    let (mut policy_loss, mut value_loss, mut passes) = (0.0, 0.0, 0usize);
    for _ in 0..config.ppo_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            let batch: Vec<&Episode> = chunk.iter().map(|&i| &episodes[i]).collect();
            let (obj, grad) = ppo_objective(policy, values, &batch, config);
            if let Some(bad) = grad.first_non_finite() {
                return Err(TrainError::NonFinite(format!("gradient at update {update}: {bad}")));
            }
            clipped += obj.clipped;
            evaluated += obj.tokens;
            policy_loss += obj.policy_loss;
            value_loss += obj.value_loss;
            passes += 1;
            adam.step(policy, values, &grad, config);
        }
    }
    let n = episodes.len() as f64;
    Ok(UpdateStats {
        update,
        episodes: episodes.len(),
        mean_reward: episodes.iter().map(|e| e.reward).sum::<f64>() / n,
        kl: episodes.iter().map(Episode::kl).sum::<f64>() / n,
        clip_fraction: if evaluated == 0 {
            0.0
        } else {
            clipped as f64 / evaluated as f64
        },
        policy_loss: policy_loss / passes as f64,
        value_loss: value_loss / passes as f64,
        mean_length: episodes.iter().map(|e| e.actions.len() as f64).sum::<f64>() / n,
    })
}

/// Reward of a sampled continuation given its prefix.
pub type RewardFn<'a> = dyn Fn(&[TokenId], &[TokenId]) -> Result<f64, TrainError> + Sync + 'a;

/// PPO state: the trained policy, its frozen reference, the value table and
/// the optimizer.
#[derive(Clone, Debug)]
pub struct PpoTrainer {
    policy: Policy,
    reference: Policy,
    values: ValueTable,
    adam: Adam,
    config: PpoConfig,
    rng: ChaCha8Rng,
    updates: usize,
}

impl PpoTrainer {
    pub fn new(policy: Policy, config: PpoConfig) -> Result<Self, TrainError> {
        config.validate()?;
        Ok(Self {
            reference: policy.clone(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            policy,
            values: ValueTable::default(),
            adam: Adam::default(),
            config,
            updates: 0,
        })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn into_policy(self) -> Policy {
        self.policy
    }

    pub fn reference(&self) -> &Policy {
        &self.reference
    }

    pub fn values(&self) -> &ValueTable {
        &self.values
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Samples a continuation of `prefix` until EOS or the length cap.
    pub fn sample(&mut self, prefix: &[TokenId]) -> Vec<TokenId> {
        let mut context = prefix.to_vec();
        let mut actions = Vec::new();
        while actions.len() < self.config.max_new_tokens {
            let probs = self.policy.probs_of(&self.policy.resolve(&context));
            let u: f64 = self.rng.random();
            let mut acc = 0.0;
            let mut pick = None;
            for id in self.policy.support_ids() {
                acc += probs[id.index()];
                pick = Some(id);
                if u < acc {
                    break;
                }
            }
            let token = pick.expect("non-empty support");
            actions.push(token);
            context.push(token);
            if token == TokenId::EOS {
                break;
            }
        }
        actions
    }

    /// Freezes rollout-time quantities for `actions`.
    pub fn prepare(
        &self,
        prefix: &[TokenId],
        actions: &[TokenId],
        reward: f64,
    ) -> Result<Episode, TrainError> {
        let mut context = prefix.to_vec();
        let mut ep = Episode {
            prefix: prefix.to_vec(),
            actions: actions.to_vec(),
            reward,
            keys: Vec::with_capacity(actions.len()),
            old_log_probs: Vec::with_capacity(actions.len()),
            ref_log_probs: Vec::with_capacity(actions.len()),
            old_values: Vec::with_capacity(actions.len()),
        };
        for &a in actions {
            if !self.policy.in_support(a) {
                return Err(TrainError::OutsideSupport(
                    self.policy.vocab().token(a).unwrap_or("?").to_string(),
                ));
            }
            let key = self.policy.resolve(&context);
            ep.old_log_probs.push(self.policy.log_probs_of(&key)[a.index()]);
            ep.ref_log_probs.push(self.reference.next_token_log_probs(&context)?[a.index()]);
            ep.old_values.push(self.values.get(&key));
            ep.keys.push(key);
            context.push(a);
        }
        if !reward.is_finite() {
            return Err(TrainError::NonFinite("episode reward".into()));
        }
        Ok(ep)
    }

    pub fn update(&mut self, episodes: &[Episode]) -> Result<UpdateStats, TrainError> {
        self.updates += 1;
        ppo_update(
            &mut self.policy,
            &mut self.values,
            &mut self.adam,
            episodes,
            &self.config,
            &mut self.rng,
            self.updates,
        )
    }

    /// Collects one batch of `n` sampled episodes over `prompts`.
    pub fn collect(
        &mut self,
        prompts: &[Vec<TokenId>],
        n: usize,
        reward: &RewardFn<'_>,
    ) -> Result<Vec<Episode>, TrainError> {
        if prompts.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let rollouts: Vec<(usize, Vec<TokenId>)> = (0..n)
            .map(|_| {
                let i = self.rng.random_range(0..prompts.len());
                (i, self.sample(&prompts[i]))
            })
            .collect();
        let rewards = map_bounded(&rollouts, DEFAULT_MAX_IN_FLIGHT, |(i, actions)| {
            reward(&prompts[*i], actions)
        });
        rollouts
            .iter()
            .zip(rewards)
            .enumerate()
            .map(|(k, ((i, actions), r))| {
                let r = r.map_err(|e| TrainError::Episode {
                    index: k,
                    source: Box::new(e),
                })?;
                self.prepare(&prompts[*i], actions, r)
            })
            .collect()
    }

    /// Runs the configured number of episodes in batches, calling `on_update`
    /// after every update.
    pub fn train(
        &mut self,
        prompts: &[Vec<TokenId>],
        reward: &RewardFn<'_>,
        mut on_update: impl FnMut(&UpdateStats, &Policy) -> Result<(), TrainError>,
    ) -> Result<Vec<UpdateStats>, TrainError> {
        let mut remaining = self.config.episodes;
        let mut all = Vec::new();
        while remaining > 0 {
            let n = remaining.min(self.config.batch_size);
            let batch = self.collect(prompts, n, reward)?;
            let stats = self.update(&batch)?;
            on_update(&stats, &self.policy)?;
            all.push(stats);
            remaining -= n;
        }
        Ok(all)
    }
}
