//! Scenario configuration: TOML schema, defaults, validation with field
//! paths, and the config hash baked into policy checkpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackProfile, AttackSet};
use crate::battery::BatteryParams;
use crate::cacc::CaccGains;
use crate::error::ConfigError;
use crate::observer::ObserverConfig;
use crate::platoon::{DriveCycle, LeaderParams};
use crate::rl::ppo::PpoConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Fixed integration step (s).
    pub dt: f64,
    /// Simulated duration (s).
    pub duration: f64,
    /// Master RNG seed; all randomness in training and sweeps flows from it.
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: 0.01,
            duration: 60.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleSection {
    /// Proportional gain (1/s^2).
    pub k_p: f64,
    /// Derivative gain (1/s).
    pub k_d: f64,
    /// Time headway (s).
    pub h: f64,
    /// Standstill distance (m).
    pub d_r: f64,
    /// Lower powertrain acceleration limit (m/s^2).
    pub a_min: f64,
    /// Upper powertrain acceleration limit (m/s^2).
    pub a_max: f64,
}

impl Default for VehicleSection {
    fn default() -> Self {
        Self {
            k_p: 0.7,
            k_d: 1.0,
            h: 0.6,
            d_r: 5.0,
            a_min: -10.0,
            a_max: 10.0,
        }
    }
}

impl VehicleSection {
    pub fn gains(&self) -> CaccGains {
        CaccGains {
            k_p: self.k_p,
            k_d: self.k_d,
            h: self.h,
            d_r: self.d_r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeaderSection {
    /// Velocity tracking gain (1/s).
    pub k_lead: f64,
    /// Reference profile: `"builtin"` or a path to a `t_s,v_mps` CSV,
    /// resolved relative to the scenario file.
    pub cycle: String,
    /// Constant reference velocity (m/s) overriding `cycle` when set.
    pub constant: Option<f64>,
}

impl Default for LeaderSection {
    fn default() -> Self {
        Self {
            k_lead: 1.0,
            cycle: "builtin".to_string(),
            constant: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenderSection {
    /// Whether the trained defender is in the loop.
    pub enabled: bool,
    /// Policy checkpoint path, resolved relative to the scenario file.
    pub policy: Option<String>,
    /// Use the action mean instead of sampling during runs.
    pub deterministic: bool,
}

impl Default for DefenderSection {
    fn default() -> Self {
        Self {
            enabled: false,
            policy: None,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// Training episodes.
    pub episodes: usize,
    /// Defender decisions per episode.
    pub steps_per_episode: usize,
    /// Physics ticks between defender decisions.
    pub decision_interval: usize,
    /// Half-width of the sampled acceleration-attack magnitudes (m/s^2).
    pub delta_a_max: f64,
    /// Half-width of the sampled current-attack magnitudes (A).
    pub delta_i_max: f64,
    /// Attack onset sampled uniformly from [0, t_start_max] (s).
    pub t_start_max: f64,
    /// Constant reference velocity used during training episodes (m/s).
    pub train_speed: f64,
    /// Episodes gathered into one PPO update. Attacked episodes terminate
    /// early and contribute only a handful of gated-on decisions each, so
    /// updating on single episodes starves the optimizer.
    pub update_every: usize,
    /// Exploration noise at the start of training (action standard
    /// deviation, m/s^2). Wide, because useful corrective actions sit near
    /// the actuator limits.
    pub sigma_init: f64,
    /// Exploration noise at the end of training. The schedule interpolates
    /// geometrically between the two; without annealing, band-edge precision
    /// never emerges from the sampling noise.
    pub sigma_final: f64,
    /// Control-effort cost per decision (reward penalty per m/s^2 of
    /// corrective action). Breaks ties between equally safe actions toward
    /// the smallest sufficient correction, so actuator saturation appears
    /// only when the attack actually demands it. Only the optimizer sees
    /// this term; reported episode returns use the plain in-band reward.
    pub action_cost: f64,
    pub ppo: PpoConfig,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            episodes: 500,
            steps_per_episode: 300,
            decision_interval: 10,
            delta_a_max: 15.0,
            delta_i_max: 40.0,
            t_start_max: 5.0,
            train_speed: 15.0,
            update_every: 2,
            sigma_init: 5.0,
            sigma_final: 1.2,
            action_cost: 0.1,
            ppo: PpoConfig::default(),
        }
    }
}

/// The full scenario: every block optional in the file, defaults bundled.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub sim: SimSection,
    pub vehicle: VehicleSection,
    pub leader: LeaderSection,
    pub battery: BatteryParams,
    pub observer: ObserverConfig,
    pub attack: Vec<AttackProfile>,
    pub defender: DefenderSection,
    pub training: TrainingSection,
    /// Directory the scenario was loaded from; relative paths inside the
    /// scenario resolve against it. Not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    /// Parse and validate a scenario file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut cfg: ScenarioConfig = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check every module invariant, reporting all violations at once with
    /// field paths.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();

        if !(self.sim.dt > 0.0 && self.sim.dt.is_finite()) {
            errs.push("sim.dt: must be > 0".to_string());
        }
        if self.sim.duration < self.sim.dt {
            errs.push("sim.duration: must be >= sim.dt".to_string());
        }

        let v = &self.vehicle;
        if v.k_p <= 0.0 {
            errs.push("vehicle.k_p: must be > 0".to_string());
        }
        if v.k_d <= 0.0 {
            errs.push("vehicle.k_d: must be > 0".to_string());
        }
        if v.h <= 0.0 {
            errs.push("vehicle.h: must be > 0".to_string());
        }
        if v.d_r <= 0.0 {
            errs.push("vehicle.d_r: must be > 0".to_string());
        }
        if v.a_min >= v.a_max {
            errs.push("vehicle.a_min: must be < vehicle.a_max".to_string());
        }

        if self.leader.k_lead <= 0.0 {
            errs.push("leader.k_lead: must be > 0".to_string());
        }
        if let Some(c) = self.leader.constant {
            if c < 0.0 || !c.is_finite() {
                errs.push("leader.constant: must be >= 0".to_string());
            }
        }

        let b = &self.battery;
        if b.n_shells < 3 {
            errs.push("battery.n_shells: must be >= 3".to_string());
        }
        if b.diffusivity <= 0.0 {
            errs.push("battery.D: must be > 0".to_string());
        }
        if b.r_a <= 0.0 {
            errs.push("battery.r_a: must be > 0".to_string());
        }
        if b.c_max <= 0.0 {
            errs.push("battery.c_max: must be > 0".to_string());
        }
        if b.r0 <= 0.0 {
            errs.push("battery.R0: must be > 0".to_string());
        }
        if b.k_b <= 0.0 {
            errs.push("battery.K_b: must be > 0".to_string());
        }
        if b.k_i <= 0.0 {
            errs.push("battery.K_i: must be > 0".to_string());
        }
        if b.kappa <= 0.0 {
            errs.push("battery.kappa: must be > 0".to_string());
        }
        if !(0.0..=1.0).contains(&b.soc_init) {
            errs.push("battery.soc_init: must be in [0, 1]".to_string());
        }
        if b.ocv_coeffs.is_empty() {
            errs.push("battery.ocv_coeffs: must be non-empty".to_string());
        }

        self.observer.validate("observer", &mut errs);

        let attack_set = AttackSet {
            profiles: self.attack.clone(),
        };
        attack_set.validate("attack", &mut errs);

        if self.defender.enabled && self.defender.policy.is_none() {
            errs.push("defender.policy: required when defender.enabled".to_string());
        }

        let t = &self.training;
        if t.episodes == 0 {
            errs.push("training.episodes: must be >= 1".to_string());
        }
        if t.steps_per_episode == 0 {
            errs.push("training.steps_per_episode: must be >= 1".to_string());
        }
        if t.decision_interval == 0 {
            errs.push("training.decision_interval: must be >= 1".to_string());
        }
        if t.delta_a_max < 0.0 || t.delta_i_max < 0.0 {
            errs.push("training.delta_a_max/delta_i_max: must be >= 0".to_string());
        }
        if t.t_start_max < 0.0 {
            errs.push("training.t_start_max: must be >= 0".to_string());
        }
        if t.train_speed < 0.0 {
            errs.push("training.train_speed: must be >= 0".to_string());
        }
        if t.update_every == 0 {
            errs.push("training.update_every: must be >= 1".to_string());
        }
        if !(t.action_cost >= 0.0 && t.action_cost.is_finite()) {
            errs.push("training.action_cost: must be >= 0".to_string());
        }
        if !(t.sigma_init > 0.0 && t.sigma_init.is_finite()) {
            errs.push("training.sigma_init: must be > 0".to_string());
        }
        if !(t.sigma_final > 0.0 && t.sigma_final.is_finite()) {
            errs.push("training.sigma_final: must be > 0".to_string());
        }
        t.ppo.validate("training.ppo", &mut errs);

        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    pub fn gains(&self) -> CaccGains {
        self.vehicle.gains()
    }

    pub fn leader_params(&self) -> LeaderParams {
        LeaderParams {
            k_lead: self.leader.k_lead,
            a_min: self.vehicle.a_min,
            a_max: self.vehicle.a_max,
        }
    }

    pub fn attack_set(&self) -> Result<AttackSet, ConfigError> {
        AttackSet::new(self.attack.clone())
    }

    /// Build the reference profile. `constant` wins over `cycle`; otherwise
    /// `cycle` is `"builtin"` or a CSV path relative to the scenario file.
    pub fn drive_cycle(&self) -> Result<DriveCycle, ConfigError> {
        if let Some(v) = self.leader.constant {
            return DriveCycle::new(vec![(0.0, v)]);
        }
        if self.leader.cycle == "builtin" {
            return Ok(DriveCycle::builtin());
        }
        DriveCycle::from_csv(&self.resolve(&self.leader.cycle))
    }

    /// Resolve a scenario-relative path.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// FNV-1a hash of the canonical serialized scenario, used to tie policy
    /// checkpoints to the configuration they were trained with.
    pub fn hash(&self) -> u64 {
        let text = toml::to_string(self).expect("scenario serializes");
        fnv1a64(text.as_bytes())
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in data {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
