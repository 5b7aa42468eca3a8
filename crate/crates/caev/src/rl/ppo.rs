//! Proximal policy optimization with a clipped surrogate objective and
//! generalized advantage estimation, specialized to the scalar-action
//! defender policy.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rl::mlp::Adam;
use crate::rl::policy::PolicyParameters;

/// Critic outputs are kept near unit scale internally; raw returns are
/// divided by this before forming value targets and multiplied back when the
/// critic is queried.
pub const VALUE_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            lr: 3e-4,
            epochs: 10,
            minibatch: 64,
            entropy_coef: 0.001,
            value_coef: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self, path: &str, errs: &mut Vec<String>) {
        if !(0.0..=1.0).contains(&self.gamma) {
            errs.push(format!("{path}.gamma: must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            errs.push(format!("{path}.lambda: must be in [0, 1]"));
        }
        if self.clip <= 0.0 || !self.clip.is_finite() {
            errs.push(format!("{path}.clip: must be > 0"));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            errs.push(format!("{path}.lr: must be > 0"));
        }
        if self.epochs == 0 {
            errs.push(format!("{path}.epochs: must be >= 1"));
        }
        if self.minibatch == 0 {
            errs.push(format!("{path}.minibatch: must be >= 1"));
        }
    }
}

/// Experience gathered at the defender decision rate during one episode.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub obs: Vec<[f64; 2]>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn push(&mut self, obs: [f64; 2], action: f64, log_prob: f64, value: f64) {
        self.obs.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
    }

    pub fn record_outcome(&mut self, reward: f64, done: bool) {
        self.rewards.push(reward);
        self.dones.push(done);
    }
}

/// Generalized advantage estimation over a single trajectory. `last_value` is
/// the bootstrap value of the state following the final transition (zero when
/// that transition was terminal). Returns `(advantages, returns)` with
/// `returns[t] = advantages[t] + values[t]`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    let mut advantages = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 == n { last_value } else { values[t + 1] };
        let delta = rewards[t] + gamma * next_value * not_done - values[t];
        carry = delta + gamma * lambda * not_done * carry;
        advantages[t] = carry;
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    (advantages, returns)
}

/// Flattened multi-episode batch, ready for minibatch updates.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub obs: Vec<[f64; 2]>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Fold one finished trajectory into the batch.
    pub fn absorb(&mut self, traj: &Trajectory, last_value: f64, gamma: f64, lambda: f64) {
        let (adv, ret) = gae_advantages(
            &traj.rewards,
            &traj.values,
            &traj.dones,
            last_value,
            gamma,
            lambda,
        );
        self.obs.extend_from_slice(&traj.obs);
        self.actions.extend_from_slice(&traj.actions);
        self.log_probs.extend_from_slice(&traj.log_probs);
        self.advantages.extend(adv);
        self.returns.extend(ret);
    }
}

/// Scale factor for the policy-gradient term of one sample. Zero exactly when
/// the clipped surrogate is saturated, i.e. moving the ratio further would
/// not change the objective.
pub fn surrogate_grad_coeff(ratio: f64, advantage: f64, clip: f64) -> f64 {
    if (advantage > 0.0 && ratio > 1.0 + clip) || (advantage < 0.0 && ratio < 1.0 - clip) {
        0.0
    } else {
        advantage * ratio
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub clip_fraction: f64,
    /// True when a non-finite update was detected and rolled back.
    pub aborted: bool,
}

pub struct PpoTrainer {
    pub cfg: PpoConfig,
    opt_actor: Adam,
    opt_log_std: Adam,
    opt_critic: Adam,
}

impl PpoTrainer {
    pub fn new(cfg: PpoConfig, policy: &PolicyParameters) -> Self {
        Self {
            opt_actor: Adam::new(cfg.lr, policy.actor.params.len()),
            opt_log_std: Adam::new(cfg.lr, 1),
            opt_critic: Adam::new(cfg.lr, policy.critic.params.len()),
            cfg,
        }
    }

    /// Run the clipped-surrogate epochs over `batch`. On any non-finite
    /// weight after the update the previous parameters are restored.
    pub fn update(
        &mut self,
        policy: &mut PolicyParameters,
        batch: &Batch,
        rng: &mut ChaCha8Rng,
    ) -> UpdateStats {
        assert!(!batch.is_empty(), "cannot update from an empty batch");
        let snapshot = policy.clone();
        let n = batch.len();

        // advantage normalization across the whole batch
        let mean = batch.advantages.iter().sum::<f64>() / n as f64;
        let var = batch
            .advantages
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt().max(1e-8);
        let advantages: Vec<f64> = batch.advantages.iter().map(|a| (a - mean) / std).collect();

        let mut stats = UpdateStats::default();
        let mut indices: Vec<usize> = (0..n).collect();
        let mut samples_seen = 0usize;
        let mut clipped_seen = 0usize;

        for _ in 0..self.cfg.epochs {
            indices.shuffle(rng);
            for chunk in indices.chunks(self.cfg.minibatch) {
                let mut actor_grad = vec![0.0; policy.actor.params.len()];
                let mut log_std_grad = 0.0;
                let mut critic_grad = vec![0.0; policy.critic.params.len()];
                let m = chunk.len() as f64;
                let sigma = policy.sigma();
                let half = 0.5 * (policy.a_max - policy.a_min);

                for &i in chunk {
                    let obs = &batch.obs[i];
                    let adv = advantages[i];
                    let (mean_a, cache) = policy.action_mean(obs);
                    let z = (batch.actions[i] - mean_a) / sigma;
                    let log_prob = -0.5 * z * z - sigma.ln() - 0.918_938_533_204_672_7;
                    let ratio = (log_prob - batch.log_probs[i]).exp();
                    samples_seen += 1;
                    if (ratio - 1.0).abs() > self.cfg.clip {
                        clipped_seen += 1;
                    }

                    let coeff = surrogate_grad_coeff(ratio, adv, self.cfg.clip);
                    stats.actor_loss -=
                        (ratio * adv).min(ratio.clamp(1.0 - self.cfg.clip, 1.0 + self.cfg.clip) * adv);
                    if coeff != 0.0 {
                        // d(-rho*A)/d mean = -A*rho * z/sigma; mean is the
                        // squashed network output
                        let d_mean = -coeff * z / sigma / m;
                        // hard-clamp squash: unit slope inside, flat outside
                        let raw_out = cache.output()[0];
                        let d_raw = if raw_out.abs() < 1.0 { d_mean * half } else { 0.0 };
                        policy.actor.backward(&cache, &[d_raw], &mut actor_grad);
                        // d logp / d log_sigma = z^2 - 1
                        log_std_grad += -coeff * (z * z - 1.0) / m;
                    }
                    // entropy bonus depends on log_std only
                    log_std_grad -= self.cfg.entropy_coef / m;

                    // critic regression on scaled targets
                    let (v_out, v_cache) = policy.critic.forward(obs);
                    let target = batch.returns[i] / VALUE_SCALE;
                    let err = v_out[0] - target;
                    stats.critic_loss += 0.5 * err * err;
                    policy.critic.backward(
                        &v_cache,
                        &[self.cfg.value_coef * err / m],
                        &mut critic_grad,
                    );
                }

                self.opt_actor.step(&mut policy.actor.params, &actor_grad);
                let mut ls = [policy.log_std];
                self.opt_log_std.step(&mut ls, &[log_std_grad]);
                policy.log_std = ls[0].clamp(-6.9, (policy.a_max - policy.a_min).ln());
                self.opt_critic.step(&mut policy.critic.params, &critic_grad);
            }
        }

        let total = (self.cfg.epochs * n) as f64;
        stats.actor_loss /= total;
        stats.critic_loss /= total;
        stats.clip_fraction = clipped_seen as f64 / samples_seen.max(1) as f64;

        if !policy.all_finite() {
            log::warn!("PPO update produced non-finite parameters; rolling back");
            *policy = snapshot;
            stats.aborted = true;
        }
        stats
    }
}
