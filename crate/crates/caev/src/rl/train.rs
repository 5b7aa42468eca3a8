//! PPO training against the closed-loop simulator under a stratified
//! distribution of attack scenarios.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{AttackProfile, AttackSet, AttackShape, AttackTarget};
use crate::config::{ScenarioConfig, TrainingSection};
use crate::error::SimError;
use crate::platoon::DriveCycle;
use crate::rl::{self, policy::PolicyParameters, ppo::{Batch, PpoTrainer, Trajectory}};
use crate::sim::World;

/// Trained weights plus the per-episode return curve.
pub struct TrainOutput {
    pub policy: PolicyParameters,
    pub curve: Vec<f64>,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Low-discrepancy sequence value in [0, 1).
fn ld(idx: usize, salt: f64) -> f64 {
    ((idx + 1) as f64 * GOLDEN + salt).fract()
}

/// Symmetric map [0,1) -> [-1, 1).
fn sym(u: f64) -> f64 {
    2.0 * u - 1.0
}

/// Attack scenario for one training episode.
///
/// Episodes cycle through a fixed phase pattern: 2 of every 10 carry no
/// attack, 3 attack the communicated acceleration, 3 the current sensor, and
/// 2 both surfaces at once. Magnitudes and onsets cover their ranges via a
/// low-discrepancy sequence, so every window of episodes sees the same mix
/// of difficulties and the learning curve is comparable across windows.
pub fn episode_attacks(t: &TrainingSection, episode: usize) -> AttackSet {
    let phase = episode % 10;
    let cycle = episode / 10;
    let mut profiles = Vec::new();
    let accel = (2..=4).contains(&phase) || phase >= 8;
    let current = (5..=7).contains(&phase) || phase >= 8;
    let t_start = t.t_start_max * ld(cycle, 0.71 + phase as f64 * 0.131);
    if accel {
        profiles.push(AttackProfile {
            target: AttackTarget::AccelComm,
            shape: AttackShape::Step,
            magnitude: t.delta_a_max * sym(ld(cycle, 0.13 + phase as f64 * 0.29)),
            t_start,
            t_end: None,
            frequency: None,
        });
    }
    if current {
        profiles.push(AttackProfile {
            target: AttackTarget::CurrentSensor,
            shape: AttackShape::Step,
            magnitude: t.delta_i_max * sym(ld(cycle, 0.47 + phase as f64 * 0.23)),
            t_start,
            t_end: None,
            frequency: None,
        });
    }
    AttackSet::new(profiles).expect("training profiles never overlap per target")
}

/// One training rollout. Returns the trajectory of gated-on decisions and
/// the full episode return (including gated-off decisions).
fn rollout(
    cfg: &ScenarioConfig,
    attacks: AttackSet,
    cycle: &DriveCycle,
    policy: &PolicyParameters,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory, f64), SimError> {
    let t = &cfg.training;
    let mut world = World::with_parts(cfg, attacks, cycle.clone(), None)?;
    world.set_record(false);
    let mut traj = Trajectory::default();
    let mut ep_return = 0.0;

    for step in 0..t.steps_per_episode {
        let gated_on = world.residual_active();
        let mut recorded = false;
        let mut effort = 0.0;
        if gated_on {
            let obs = policy.observe(world.spacing_error(), world.residual_signal());
            let s = policy.sample(&obs, rng);
            world.set_u_rl(s.executed);
            traj.push(obs, s.raw, s.log_prob, s.value);
            recorded = true;
            effort = s.executed.abs();
        } else {
            world.set_u_rl(0.0);
        }

        let mut in_band = true;
        let mut diverged = false;
        for _ in 0..t.decision_interval {
            if let Err(err) = world.tick() {
                log::warn!("training episode diverged: {err}");
                diverged = true;
                break;
            }
            if world.spacing_error().abs() > rl::REWARD_BAND {
                in_band = false;
            }
        }

        let reward = if in_band && !diverged {
            rl::REWARD_IN_BAND
        } else {
            rl::REWARD_OUT_OF_BAND
        };
        ep_return += reward;
        let terminal = !in_band || diverged;
        if recorded {
            // the optimizer additionally pays for control effort; the
            // reported return does not
            traj.record_outcome(
                reward - t.action_cost * effort,
                terminal || step + 1 == t.steps_per_episode,
            );
        }
        if terminal {
            break;
        }
    }
    Ok((traj, ep_return))
}

/// Full training run: seeded, deterministic, one PPO update per episode with
/// recorded experience.
pub fn train(cfg: &ScenarioConfig) -> Result<TrainOutput, SimError> {
    cfg.validate()?;
    let mut env_cfg = cfg.clone();
    env_cfg.defender.enabled = false;
    env_cfg.defender.policy = None;
    env_cfg.attack.clear();

    let t = cfg.training.clone();
    let cycle = DriveCycle::new(vec![(0.0, t.train_speed)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
    let mut policy = PolicyParameters::new(
        cfg.vehicle.a_min,
        cfg.vehicle.a_max,
        cfg.hash(),
        &mut rng,
    );
    let mut trainer = PpoTrainer::new(t.ppo, &policy);
    let mut curve = Vec::with_capacity(t.episodes);

    let mut batch = Batch::default();
    for episode in 0..t.episodes {
        // scheduled exploration: geometric anneal from sigma_init to
        // sigma_final; this overrides any gradient drift of log_std
        let frac = if t.episodes > 1 {
            episode as f64 / (t.episodes - 1) as f64
        } else {
            1.0
        };
        policy.log_std = (1.0 - frac) * t.sigma_init.ln() + frac * t.sigma_final.ln();
        let attacks = episode_attacks(&t, episode);
        let (traj, ep_return) = rollout(&env_cfg, attacks, &cycle, &policy, &mut rng)?;
        curve.push(ep_return);

        if !traj.is_empty() {
            batch.absorb(&traj, 0.0, t.ppo.gamma, t.ppo.lambda);
        }
        let flush = (episode + 1) % t.update_every == 0 || episode + 1 == t.episodes;
        if flush && !batch.is_empty() {
            let stats = trainer.update(&mut policy, &batch, &mut rng);
            if stats.aborted {
                log::warn!("episode {episode}: update rolled back");
            }
            batch = Batch::default();
        }

        if (episode + 1) % 50 == 0 {
            let window = &curve[curve.len().saturating_sub(50)..];
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            log::info!(
                "episode {}/{}: mean return over last {} = {:.0}",
                episode + 1,
                t.episodes,
                window.len(),
                mean
            );
        }
    }

    Ok(TrainOutput { policy, curve })
}

/// Write the reward-vs-episode curve as CSV.
pub fn write_curve(curve: &[f64], path: &std::path::Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "episode,return")?;
    for (i, r) in curve.iter().enumerate() {
        writeln!(f, "{i},{r}")?;
    }
    Ok(())
}
