//! PPO fixtures: a two-token toy policy for gradient checks and a
//! three-armed bandit.

use std::collections::HashMap;

use nprompt_core::lm::{TokenId, Vocabulary};
use nprompt_core::trainer::{
    default_support, ppo_objective, Episode, Policy, PpoConfig, PpoTrainer, TrainError, ValueTable,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toy_policy(rng: &mut ChaCha8Rng) -> (Vocabulary, Policy) {
    let v = Vocabulary::new(["a", "b"]);
    let (a, b) = (v.lookup("a"), v.lookup("b"));
    let mut rows = HashMap::new();
    for key in [vec![], vec![a], vec![b]] {
        rows.insert(key, (0..v.len()).map(|_| rng.random_range(-2.0..2.0)).collect());
    }
    (v.clone(), Policy::from_rows(v.clone(), 2, default_support(&v), rows).unwrap())
}

/// Two-token episodes whose rollout log-probs are jittered around the
/// current policy so some ratios fall outside the clip range.
pub fn toy_episodes(rng: &mut ChaCha8Rng, policy: &Policy) -> Vec<Episode> {
    let tokens: Vec<TokenId> = policy.support_ids().collect();
    (0..4)
        .map(|_| {
            let actions: Vec<TokenId> =
                (0..2).map(|_| tokens[rng.random_range(0..tokens.len())]).collect();
            let mut ctx = vec![];
            let mut ep = Episode {
                prefix: vec![],
                actions: actions.clone(),
                reward: rng.random_range(-1.0..1.0),
                keys: vec![],
                old_log_probs: vec![],
                ref_log_probs: vec![],
                old_values: vec![],
            };
            for a in actions {
                let key = policy.resolve(&ctx);
                let lp = policy.log_probs_of(&key)[a.index()];
                ep.old_log_probs.push(lp + rng.random_range(-0.4..0.4));
                ep.ref_log_probs.push(lp + rng.random_range(-1.0..1.0));
                ep.old_values.push(rng.random_range(-0.5..0.5));
                ep.keys.push(key);
                ctx.push(a);
            }
            ep
        })
        .collect()
}

/// Relative error between the analytic gradient of the clipped objective and
/// central finite differences over every policy logit and value entry, at the
/// random point `point`.
pub fn finite_difference_error(point: u64) -> f64 {
    let cfg = PpoConfig::desk();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(point);
    let (_, mut policy) = toy_policy(&mut rng);
    let episodes = toy_episodes(&mut rng, &policy);
    let refs: Vec<&Episode> = episodes.iter().collect();
    let mut values = ValueTable::default();
    for ep in &episodes {
        for k in &ep.keys {
            values.set(k.clone(), rng.random_range(-0.5..0.5));
        }
    }
    let (obj, grad) = ppo_objective(&policy, &values, &refs, &cfg);
    assert!(obj.total().is_finite());
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let loss = |p: &Policy, v: &ValueTable| ppo_objective(p, v, &refs, &cfg).0.total();
    let keys: Vec<Vec<TokenId>> = policy.rows().keys().cloned().collect();
    let support: Vec<TokenId> = policy.support_ids().collect();
    for key in &keys {
        for &t in &support {
            let x = policy.logits(key).unwrap()[t.index()];
            policy.set_logit(key, t, x + h).unwrap();
            let up = loss(&policy, &values);
            policy.set_logit(key, t, x - h).unwrap();
            let down = loss(&policy, &values);
            policy.set_logit(key, t, x).unwrap();
            numeric.push((up - down) / (2.0 * h));
            analytic.push(grad.policy.get(key).map_or(0.0, |g| g[t.index()]));
        }
        let x = values.get(key);
        values.set(key.clone(), x + h);
        let up = loss(&policy, &values);
        values.set(key.clone(), x - h);
        let down = loss(&policy, &values);
        values.set(key.clone(), x);
        numeric.push((up - down) / (2.0 * h));
        analytic.push(grad.value.get(key).copied().unwrap_or(0.0));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12)
}

/// Largest parameter change after one update on a batch with zero reward,
/// and whether every advantage in the batch was exactly zero.
pub fn zero_advantage_change(seed: u64) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, policy) = toy_policy(&mut rng);
    let cfg = PpoConfig { max_new_tokens: 6, seed, ..PpoConfig::desk() };
    let mut trainer = PpoTrainer::new(policy.clone(), cfg).unwrap();
    let prompts = vec![vec![], vec![v.lookup("a")]];
    let zero = |_: &[TokenId], _: &[TokenId]| -> Result<f64, TrainError> { Ok(0.0) };
    let batch = trainer.collect(&prompts, 8, &zero).unwrap();
    let all_zero = batch.iter().all(|e| e.advantages(0.2).iter().all(|a| *a == 0.0))
        && batch.iter().flat_map(|e| &e.keys).all(|k| trainer.values().get(k) == 0.0);
    trainer.update(&batch).unwrap();
    let values_untouched = batch.iter().flat_map(|e| &e.keys).all(|k| trainer.values().get(k) == 0.0);
    (trainer.policy().max_abs_diff(&policy), all_zero && values_untouched)
}

pub fn bandit_policy() -> (Vocabulary, Policy) {
    let v = Vocabulary::new(["a", "b", "c"]);
    let support = v.ids().map(|id| id.index() >= 4).collect();
    (v.clone(), Policy::uniform(v, 1, support).unwrap())
}

pub fn bandit_config(seed: u64, kl_coef: f64) -> PpoConfig {
    PpoConfig {
        episodes: 200 * 16,
        batch_size: 16,
        minibatch_size: 4,
        learning_rate: 0.05,
        kl_coef,
        max_new_tokens: 1,
        seed,
        ..PpoConfig::desk()
    }
}

pub struct BanditRun {
    /// `P(b)` after each update.
    pub p_best: Vec<f64>,
    pub final_kl: f64,
}

pub fn run_bandit(seed: u64, kl_coef: f64) -> BanditRun {
    let (v, policy) = bandit_policy();
    let b = v.lookup("b");
    let mut trainer = PpoTrainer::new(policy, bandit_config(seed, kl_coef)).unwrap();
    let reward = move |_: &[TokenId], a: &[TokenId]| -> Result<f64, TrainError> {
        Ok(if a == [b] { 1.0 } else { 0.0 })
    };
    let mut p_best = Vec::new();
    trainer
        .train(&[vec![]], &reward, |_, p| {
            p_best.push(p.probs_of(&[])[b.index()]);
            Ok(())
        })
        .unwrap();
    BanditRun {
        p_best,
        final_kl: trainer.policy().kl_row(trainer.reference(), &[]),
    }
}

/// Maximizer of `E[R] - beta * KL(pi || uniform)` over three arms with
/// reward 1 on one arm: `pi ∝ exp(R / beta)`.
pub fn regularized_optimum(beta: f64) -> f64 {
    let e = (1.0 / beta).exp();
    e / (e + 2.0)
}
