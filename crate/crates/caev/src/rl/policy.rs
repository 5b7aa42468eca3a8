//! Gaussian actor-critic policy over the two-element observation (spacing
//! error and the signed acceleration-channel vehicle residual), with residual
//! gating and bounded actions, plus JSON checkpointing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::rl::mlp::{ForwardCache, Mlp};

pub const CHECKPOINT_VERSION: u32 = 1;
const LOG_STD_MIN: f64 = -6.9; // exp ~ 1e-3
const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Normalization constants applied to the raw observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsScale {
    pub e: f64,
    pub r_v: f64,
}

impl Default for ObsScale {
    fn default() -> Self {
        // the reward band is |e| <= 1 m, so the error feeds through unscaled;
        // residual norms reach ~10 under the strongest training attacks
        Self { e: 1.0, r_v: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

/// Actor and critic weights with the action parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub obs_scale: ObsScale,
    /// FNV-1a hash of the scenario the policy was trained with.
    pub config_hash: u64,
}

/// Outcome of a stochastic action draw, kept for the PPO update.
#[derive(Debug, Clone, Copy)]
pub struct ActionSample {
    /// Unclamped Gaussian draw (the executed action is this clamped).
    pub raw: f64,
    /// Executed (clamped, gated) action.
    pub executed: f64,
    pub log_prob: f64,
    pub value: f64,
}

impl PolicyParameters {
    pub fn new<R: Rng>(a_min: f64, a_max: f64, config_hash: u64, rng: &mut R) -> Self {
        Self {
            actor: Mlp::new(vec![2, 64, 64, 1], rng),
            critic: Mlp::new(vec![2, 64, 64, 1], rng),
            // wide initial spread: useful corrective actions sit near the
            // actuator limits, and a narrow initial policy never reaches them
            log_std: 5.0f64.ln(),
            a_min,
            a_max,
            obs_scale: ObsScale::default(),
            config_hash,
        }
    }

    /// Scaled observation `[e / s_e, r_v / s_r]`, where `r_v` here is the
    /// signed acceleration-channel component of the vehicle residual.
    pub fn observe(&self, e: f64, r_v: f64) -> [f64; 2] {
        [e / self.obs_scale.e, r_v / self.obs_scale.r_v]
    }

    /// Inverse of [`observe`], used by tests.
    pub fn unobserve(&self, obs: [f64; 2]) -> (f64, f64) {
        (obs[0] * self.obs_scale.e, obs[1] * self.obs_scale.r_v)
    }

    /// Action mean: hard-clamped network output mapped into
    /// `[a_min, a_max]`. A hard clamp (rather than tanh) lets the mean sit
    /// exactly on the actuator limits, which the strongest attacks require.
    pub fn action_mean(&self, obs: &[f64; 2]) -> (f64, ForwardCache) {
        let (out, cache) = self.actor.forward(obs);
        let center = 0.5 * (self.a_max + self.a_min);
        let half = 0.5 * (self.a_max - self.a_min);
        (center + half * out[0].clamp(-1.0, 1.0), cache)
    }

    pub fn sigma(&self) -> f64 {
        self.log_std.max(LOG_STD_MIN).exp()
    }

    pub fn value(&self, obs: &[f64; 2]) -> f64 {
        self.critic.forward(obs).0[0] * super::ppo::VALUE_SCALE
    }

    /// Defender action. With the residual gate closed the action is exactly
    /// zero; otherwise the Gaussian policy is sampled (or its mean taken) and
    /// clamped into the actuator bounds.
    pub fn act(
        &self,
        obs: &[f64; 2],
        mode: ActionMode,
        residual_active: bool,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        if !residual_active {
            return 0.0;
        }
        let (mean, _) = self.action_mean(obs);
        match mode {
            ActionMode::Deterministic => mean.clamp(self.a_min, self.a_max),
            ActionMode::Stochastic => self.sample(obs, rng).executed,
        }
    }

    /// Stochastic draw with the bookkeeping PPO needs.
    pub fn sample(&self, obs: &[f64; 2], rng: &mut ChaCha8Rng) -> ActionSample {
        let (mean, _) = self.action_mean(obs);
        let sigma = self.sigma();
        let z: f64 = {
            // Box-Muller keeps us independent of distribution crates
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let raw = mean + sigma * z;
        ActionSample {
            raw,
            executed: raw.clamp(self.a_min, self.a_max),
            log_prob: self.log_prob(obs, raw),
            value: self.value(obs),
        }
    }

    /// Log-density of the (unclamped) action under the current policy.
    pub fn log_prob(&self, obs: &[f64; 2], raw_action: f64) -> f64 {
        let (mean, _) = self.action_mean(obs);
        let sigma = self.sigma();
        let z = (raw_action - mean) / sigma;
        -0.5 * z * z - sigma.ln() - 0.5 * LOG_2PI
    }

    /// Differential entropy of the action distribution.
    pub fn entropy(&self) -> f64 {
        self.sigma().ln() + 0.5 * (LOG_2PI + 1.0)
    }

    pub fn all_finite(&self) -> bool {
        self.actor.params.iter().all(|p| p.is_finite())
            && self.critic.params.iter().all(|p| p.is_finite())
            && self.log_std.is_finite()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ConfigError> {
        let doc = Checkpoint {
            version: CHECKPOINT_VERSION,
            policy: self.clone(),
        };
        let data = serde_json::to_string_pretty(&doc)
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        std::fs::write(path, data).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let data = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let doc: Checkpoint =
            serde_json::from_str(&data).map_err(|e| ConfigError::Parse(format!(
                "{}: {e}",
                path.display()
            )))?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(ConfigError::Parse(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                doc.version
            )));
        }
        if !doc.policy.all_finite() {
            return Err(ConfigError::Parse(format!(
                "{}: checkpoint contains non-finite weights",
                path.display()
            )));
        }
        Ok(doc.policy)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    policy: PolicyParameters,
}
