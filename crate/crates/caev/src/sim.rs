//! Closed-loop engine: wires leader, CACC, attacks, defender, BMS, battery,
//! ego dynamics, and the residual generators on a fixed-step clock, and
//! records full traces.

use std::path::Path;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackProfile, AttackSet, AttackShape, AttackTarget};
use crate::battery::{self, BatteryParams, BatteryState};
use crate::cacc::{self, CaccGains};
use crate::config::ScenarioConfig;
use crate::error::SimError;
use crate::observer::{DefenderObserver, ObserverInputs};
use crate::platoon::{self, leader_accel, DriveCycle, LeaderParams, LeaderState, VehicleState};
use crate::rl;
use crate::rl::policy::{ActionMode, PolicyParameters};

/// One record per physics tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub t: f64,
    pub d: f64,
    pub w: f64,
    pub a: f64,
    pub e: f64,
    pub u_req: f64,
    pub p_req: f64,
    pub i: f64,
    pub v: f64,
    pub c_surf: f64,
    pub p: f64,
    pub u: f64,
    pub u_rl: f64,
    pub r_v: [f64; 3],
    pub r_v_norm: f64,
    pub r_b: f64,
    pub delta_a: f64,
    pub delta_i: f64,
    pub reward: f64,
}

pub const TRACE_HEADER: &str = "t,d,w,a,e,u_req,P_req,I,V,c_surf,P,u,u_RL,\
r_v_d,r_v_w,r_v_a,r_v_norm,r_b,delta_a,delta_I,reward";

/// Run-level outcome flags and extremes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Smallest gap seen (m).
    pub min_d: f64,
    /// Largest spacing-error magnitude seen (m).
    pub max_abs_e: f64,
    /// Gap reached zero.
    pub collision: bool,
    /// Gap dropped below the standstill distance d_r.
    pub unsafe_entry: bool,
}

impl Summary {
    fn new() -> Self {
        Self {
            min_d: f64::INFINITY,
            max_abs_e: 0.0,
            collision: false,
            unsafe_entry: false,
        }
    }

    fn absorb(&mut self, d: f64, e: f64, d_r: f64) {
        self.min_d = self.min_d.min(d);
        self.max_abs_e = self.max_abs_e.max(e.abs());
        self.collision |= d <= 0.0;
        self.unsafe_entry |= d < d_r;
    }
}

/// Full time series plus the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub rows: Vec<Row>,
    pub summary: Summary,
}

fn fmt9(x: f64) -> String {
    // 9 significant digits
    format!("{x:.8e}")
}

impl SimTrace {
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{TRACE_HEADER}")?;
        for r in &self.rows {
            let cols = [
                r.t, r.d, r.w, r.a, r.e, r.u_req, r.p_req, r.i, r.v, r.c_surf, r.p, r.u, r.u_rl,
                r.r_v[0], r.r_v[1], r.r_v[2], r.r_v_norm, r.r_b, r.delta_a, r.delta_i, r.reward,
            ];
            let line: Vec<String> = cols.iter().map(|x| fmt9(*x)).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn write_summary_json(&self, path: &Path) -> std::io::Result<()> {
        let data = serde_json::to_string_pretty(&self.summary)?;
        std::fs::write(path, data)
    }
}

/// Defender wiring inside a world.
struct Defender {
    policy: PolicyParameters,
    mode: ActionMode,
}

/// One closed-loop simulation instance.
pub struct World {
    dt: f64,
    n_steps: usize,
    gains: CaccGains,
    leader_params: LeaderParams,
    battery_params: BatteryParams,
    cycle: DriveCycle,
    attacks: AttackSet,
    decision_interval: usize,

    pub ego: VehicleState,
    pub leader: LeaderState,
    pub battery: BatteryState,
    bms_i_cmd: f64,
    observer: DefenderObserver,
    defender: Option<Defender>,
    u_rl: f64,
    t: f64,
    step_idx: usize,

    rng: ChaCha8Rng,
    record: bool,
    rows: Vec<Row>,
    summary: Summary,
}

impl World {
    /// Build a world from the scenario's own attack set and drive cycle.
    pub fn new(cfg: &ScenarioConfig, policy: Option<PolicyParameters>) -> Result<Self, SimError> {
        let attacks = cfg.attack_set()?;
        let cycle = cfg.drive_cycle()?;
        Self::with_parts(cfg, attacks, cycle, policy)
    }

    /// Build a world with overridden attacks and reference profile (used by
    /// training episodes and sweeps).
    pub fn with_parts(
        cfg: &ScenarioConfig,
        attacks: AttackSet,
        cycle: DriveCycle,
        policy: Option<PolicyParameters>,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        let gains = cfg.gains();
        let w0 = cycle.sample(0.0);
        let ego = VehicleState {
            d: gains.d_r + gains.h * w0,
            w: w0,
            a: 0.0,
        };
        let battery = BatteryState::init(&cfg.battery);
        let observer = DefenderObserver::new(
            cfg.observer.clone(),
            &gains,
            &ego,
            &battery,
            cfg.sim.dt,
        )?;
        let defender = match policy {
            Some(policy) if cfg.defender.enabled => Some(Defender {
                policy,
                mode: if cfg.defender.deterministic {
                    ActionMode::Deterministic
                } else {
                    ActionMode::Stochastic
                },
            }),
            _ => None,
        };
        Ok(Self {
            dt: cfg.sim.dt,
            n_steps: (cfg.sim.duration / cfg.sim.dt).round() as usize,
            gains,
            leader_params: cfg.leader_params(),
            battery_params: cfg.battery.clone(),
            cycle,
            attacks,
            decision_interval: cfg.training.decision_interval,
            ego,
            leader: LeaderState {
                w_lead: w0,
                a_lead: 0.0,
            },
            battery,
            bms_i_cmd: 0.0,
            observer,
            defender,
            u_rl: 0.0,
            t: 0.0,
            step_idx: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.sim.seed),
            record: true,
            rows: Vec::new(),
            summary: Summary::new(),
        })
    }

    /// Disable trace recording (training rollouts).
    pub fn set_record(&mut self, record: bool) {
        self.record = record;
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Spacing error from the current true state.
    pub fn spacing_error(&self) -> f64 {
        self.ego.d - self.gains.h * self.ego.w - self.gains.d_r
    }

    pub fn residual_norm(&self) -> f64 {
        self.observer.residuals().r_v_norm
    }

    /// Signed scalar residual fed to the defender: the acceleration channel
    /// of `r_v`. Unlike the norm it carries the attack direction, so the
    /// policy can oppose it smoothly instead of dithering on the sign of `e`.
    pub fn residual_signal(&self) -> f64 {
        self.observer.residuals().r_v[2]
    }

    pub fn residual_active(&self) -> bool {
        self.observer.residual_active()
    }

    /// Set the defender action externally (training harness). Held until the
    /// next call; ignored when an internal defender policy is wired.
    pub fn set_u_rl(&mut self, u: f64) {
        self.u_rl = u;
    }

    pub fn u_rl(&self) -> f64 {
        self.u_rl
    }

    pub fn summary(&self) -> Summary {
        self.summary
    }

    pub fn is_finite(&self) -> bool {
        self.ego.is_finite() && self.battery.is_finite() && self.bms_i_cmd.is_finite()
    }

    /// Advance one physics tick in the fixed block order.
    pub fn tick(&mut self) -> Result<(), SimError> {
        let t = self.t;
        let w_ref = self.cycle.sample(t);

        // measurements and communications sampled at the start of the tick;
        // the leader announces the acceleration it is about to apply
        let w_c = self.leader.w_lead;
        let a_c = leader_accel(w_c, w_ref, &self.leader_params);
        let range_rate = self.leader.w_lead - self.ego.w;
        let v_meas = self.battery.v;
        let i_meas = self.battery.i;
        let x_meas = self.ego;

        let (delta_a, delta_i) = self.attacks.evaluate(t);
        let (e, e_dot) = cacc::tracking_error(&x_meas, w_c, &self.gains);
        let u_req = cacc::required_input(e, e_dot, a_c, delta_a, &self.gains);

        // defender decision at its own (slower) rate, gated on residuals
        if self.step_idx.is_multiple_of(self.decision_interval) {
            if let Some(def) = &self.defender {
                let obs = def.policy.observe(e, self.observer.residuals().r_v[2]);
                self.u_rl =
                    def.policy
                        .act(&obs, def.mode, self.observer.residual_active(), &mut self.rng);
            }
        }

        // power path: request, BMS command on attacked feedback, diffusion,
        // delivered power back into an acceleration
        let p_req = battery::u_to_power(u_req + self.u_rl, self.battery_params.kappa);
        self.bms_i_cmd = battery::bms_command(
            &self.battery_params,
            self.bms_i_cmd,
            p_req,
            v_meas,
            i_meas + delta_i,
            self.dt,
        );
        self.battery = battery::battery_step(&self.battery, self.bms_i_cmd, &self.battery_params, self.dt);
        let p = battery::delivered_power(&self.battery);
        let u = battery::power_to_u(p, self.battery_params.kappa);

        self.ego = platoon::ego_step(x_meas, u, w_c, self.gains.h, self.dt);

        // observer mirrors the tick from clean local reconstructions
        self.observer.step(
            &ObserverInputs {
                w_ref,
                x_meas,
                range_rate,
                u_rl: self.u_rl,
                v_meas,
            },
            &self.gains,
            &self.leader_params,
            &self.battery_params,
            self.dt,
        );
        self.observer.update_residuals(&self.ego, self.battery.v);

        // leader advances last so this tick's communications were pre-step
        self.leader = platoon::leader_step(self.leader, w_ref, &self.leader_params, self.dt);

        self.t = (self.step_idx + 1) as f64 * self.dt;
        self.step_idx += 1;

        if !self.is_finite() {
            return Err(SimError::NonFinite {
                step: self.step_idx,
                t: self.t,
                what: "vehicle or battery state".to_string(),
            });
        }

        let e_now = self.spacing_error();
        self.summary.absorb(self.ego.d, e_now, self.gains.d_r);
        if self.record {
            let res = self.observer.residuals();
            self.rows.push(Row {
                t,
                d: self.ego.d,
                w: self.ego.w,
                a: self.ego.a,
                e: e_now,
                u_req,
                p_req,
                i: self.battery.i,
                v: self.battery.v,
                c_surf: self.battery.c_surf(),
                p,
                u,
                u_rl: self.u_rl,
                r_v: res.r_v,
                r_v_norm: res.r_v_norm,
                r_b: res.r_b,
                delta_a,
                delta_i,
                reward: rl::reward(e_now),
            });
        }
        Ok(())
    }

    /// Run the configured duration and hand back the trace.
    pub fn run(mut self) -> Result<SimTrace, SimError> {
        for _ in 0..self.n_steps {
            self.tick()?;
        }
        Ok(SimTrace {
            rows: self.rows,
            summary: self.summary,
        })
    }
}

/// Convenience wrapper: build and run in one call.
pub fn run(cfg: &ScenarioConfig, policy: Option<PolicyParameters>) -> Result<SimTrace, SimError> {
    World::new(cfg, policy)?.run()
}

/// Which attack magnitude a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    DeltaAMax,
    DeltaIMax,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "delta_a_max" => Some(Self::DeltaAMax),
            "delta_I_max" => Some(Self::DeltaIMax),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::DeltaAMax => "delta_a_max",
            Self::DeltaIMax => "delta_I_max",
        }
    }

    fn target(&self) -> AttackTarget {
        match self {
            Self::DeltaAMax => AttackTarget::AccelComm,
            Self::DeltaIMax => AttackTarget::CurrentSensor,
        }
    }

    /// Signed injection for a sweep magnitude: acceleration attacks push the
    /// ego forward (+), current attacks under-report discharge (-), matching
    /// the coordinated case-study directions.
    fn signed(&self, magnitude: f64) -> f64 {
        match self {
            Self::DeltaAMax => magnitude,
            Self::DeltaIMax => -magnitude,
        }
    }
}

/// Per-magnitude sweep outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub min_d: f64,
    pub max_abs_e: f64,
    /// Fraction of attack-active steps with u_RL pinned at a_min.
    pub saturation_frac: f64,
    pub unsafe_entry: bool,
    pub collision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: String,
    pub points: Vec<SweepPoint>,
    /// Largest swept magnitude that stayed out of the unsafe region.
    pub boundary: Option<f64>,
}

impl SweepReport {
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "axis,value,min_d,max_abs_e,saturation_frac,unsafe_entry,collision"
        )?;
        for p in &self.points {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                self.axis,
                fmt9(p.value),
                fmt9(p.min_d),
                fmt9(p.max_abs_e),
                fmt9(p.saturation_frac),
                p.unsafe_entry,
                p.collision
            )?;
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let data = serde_json::to_string_pretty(self)?;
        std::fs::write(path, data)
    }
}

/// Attack onset used when the base scenario has no profile on the swept
/// surface.
const SWEEP_DEFAULT_ONSET: f64 = 5.0;

fn sweep_attack(base: &ScenarioConfig, axis: SweepAxis, magnitude: f64) -> AttackSet {
    let t_start = base
        .attack
        .iter()
        .find(|p| p.target == axis.target())
        .map(|p| p.t_start)
        .unwrap_or(SWEEP_DEFAULT_ONSET);
    AttackSet::new(vec![AttackProfile {
        target: axis.target(),
        shape: AttackShape::Step,
        magnitude: axis.signed(magnitude),
        t_start,
        t_end: None,
        frequency: None,
    }])
    .expect("single step profile is always valid")
}

fn sweep_one(
    cfg: &ScenarioConfig,
    axis: SweepAxis,
    magnitude: f64,
    policy: Option<&PolicyParameters>,
) -> Result<SweepPoint, SimError> {
    let attacks = sweep_attack(cfg, axis, magnitude);
    let cycle = cfg.drive_cycle()?;
    let world = World::with_parts(cfg, attacks, cycle, policy.cloned())?;
    let trace = world.run()?;
    let a_min = cfg.vehicle.a_min;
    let (active, saturated) = trace.rows.iter().fold((0usize, 0usize), |(n, s), r| {
        if r.delta_a != 0.0 || r.delta_i != 0.0 {
            (n + 1, s + usize::from(r.u_rl <= a_min + 1e-6))
        } else {
            (n, s)
        }
    });
    Ok(SweepPoint {
        value: magnitude,
        min_d: trace.summary.min_d,
        max_abs_e: trace.summary.max_abs_e,
        saturation_frac: if active > 0 {
            saturated as f64 / active as f64
        } else {
            0.0
        },
        unsafe_entry: trace.summary.unsafe_entry,
        collision: trace.summary.collision,
    })
}

/// Run one scenario per magnitude, optionally across `jobs` threads.
/// Per-run failures are logged and skipped; the sweep continues.
pub fn sweep(
    cfg: &ScenarioConfig,
    axis: SweepAxis,
    values: &[f64],
    policy: Option<&PolicyParameters>,
    jobs: usize,
) -> SweepReport {
    let jobs = jobs.max(1).min(values.len().max(1));
    let results: Mutex<Vec<Option<SweepPoint>>> = Mutex::new(vec![None; values.len()]);
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= values.len() {
                    break;
                }
                match sweep_one(cfg, axis, values[i], policy) {
                    Ok(point) => results.lock().unwrap()[i] = Some(point),
                    Err(err) => log::error!("sweep value {}: {err}", values[i]),
                }
            });
        }
    });
    let points: Vec<SweepPoint> = results.into_inner().unwrap().into_iter().flatten().collect();
    let boundary = points
        .iter()
        .filter(|p| !p.unsafe_entry)
        .map(|p| p.value)
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        });
    SweepReport {
        axis: axis.name().to_string(),
        points,
        boundary,
    }
}
