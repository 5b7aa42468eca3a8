//! Model-based residual generators for the vehicle motion and the battery.
//!
//! The vehicle estimator integrates the plant model driven by locally
//! reconstructed (unattackable) inputs with full-state output injection; the
//! battery estimator runs a clean replica of the BMS/battery chain with a
//! voltage-innovation correction. Under no attack both residuals stay at the
//! numerical floor; injected falsifications force them away from zero.

use nalgebra::{Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::battery::{self, BatteryParams, BatteryState};
use crate::cacc::{self, CaccGains};
use crate::error::ConfigError;
use crate::platoon::{leader_accel, LeaderParams, VehicleState};

/// Residual-generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverConfig {
    /// Desired eigenvalues of the vehicle error dynamics (rad/s, all < 0).
    pub poles: [f64; 3],
    /// Gate threshold on the euclidean vehicle residual norm.
    pub theta_v: f64,
    /// Gate threshold on the battery voltage residual (V).
    pub theta_b: f64,
    /// Battery voltage-innovation gain (mol/(m^3 V s)).
    pub m_b: f64,
    /// Time constant of the dirty-derivative predecessor-acceleration filter
    /// (s); used when `leader_model` is off.
    pub filter_tau: f64,
    /// Reconstruct the predecessor acceleration from the known leader
    /// tracking law instead of differentiating the range-rate estimate.
    pub leader_model: bool,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            poles: [-2.0, -2.5, -3.0],
            theta_v: 0.05,
            theta_b: 0.005,
            m_b: 2e4,
            filter_tau: 0.1,
            leader_model: true,
        }
    }
}

impl ObserverConfig {
    pub fn validate(&self, path: &str, errs: &mut Vec<String>) {
        for (i, p) in self.poles.iter().enumerate() {
            if *p >= 0.0 || !p.is_finite() {
                errs.push(format!("{path}.poles[{i}]: must have negative real part"));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                if self.poles[i] == self.poles[j] {
                    errs.push(format!("{path}.poles: repeated pole {}", self.poles[i]));
                }
            }
        }
        if self.theta_v <= 0.0 {
            errs.push(format!("{path}.theta_v: must be > 0"));
        }
        if self.theta_b <= 0.0 {
            errs.push(format!("{path}.theta_b: must be > 0"));
        }
        if self.filter_tau <= 0.0 {
            errs.push(format!("{path}.filter_tau: must be > 0"));
        }
    }
}

/// Vehicle plant matrix for states `[d, w, a]` with inputs `[w_c, u]`:
/// `d' = w_c - w`, `w' = a`, `a' = (u - a)/h`.
pub fn vehicle_system_matrix(h: f64) -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0 / h)
}

/// Input matrix pairing [`vehicle_system_matrix`].
pub fn vehicle_input_matrix(h: f64) -> Matrix3x2<f64> {
    Matrix3x2::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0 / h)
}

/// Gain `M` such that `eig(A - M) = poles`.
///
/// With full-state measurement `A - M` is unconstrained, so the gain shifts
/// the error dynamics onto the diagonal matrix of the requested poles. When
/// the requested poles already equal the spectrum of `A` the zero gain is
/// returned, matching the convention that a satisfied request costs nothing.
pub fn place_observer_gain(a: &Matrix3<f64>, poles: &[f64; 3]) -> Result<Matrix3<f64>, ConfigError> {
    let mut errs = Vec::new();
    for p in poles {
        if *p >= 0.0 || !p.is_finite() {
            errs.push(format!("observer.poles: {p} must have negative real part"));
        }
    }
    for i in 0..3 {
        for j in i + 1..3 {
            if poles[i] == poles[j] {
                errs.push(format!("observer.poles: repeated pole {}", poles[i]));
            }
        }
    }
    if !errs.is_empty() {
        return Err(ConfigError::Invalid(errs));
    }

    // already placed: spectrum of A matches the request
    let eig = a.complex_eigenvalues();
    let mut current: Vec<(f64, f64)> = eig.iter().map(|z| (z.re, z.im)).collect();
    let mut wanted: Vec<(f64, f64)> = poles.iter().map(|p| (*p, 0.0)).collect();
    let cmp = |x: &(f64, f64), y: &(f64, f64)| {
        x.0.partial_cmp(&y.0)
            .unwrap()
            .then(x.1.partial_cmp(&y.1).unwrap())
    };
    current.sort_by(cmp);
    wanted.sort_by(cmp);
    let matched = current
        .iter()
        .zip(wanted.iter())
        .all(|(c, w)| (c.0 - w.0).abs() < 1e-12 && (c.1 - w.1).abs() < 1e-12);
    if matched {
        return Ok(Matrix3::zeros());
    }

    Ok(a - Matrix3::from_diagonal(&Vector3::new(poles[0], poles[1], poles[2])))
}

/// Exact one-step transition of the linear vehicle model under zero-order-
/// hold inputs, as realized by the RK4 integrator: `x+ = Phi x + Gamma u`
/// with `Phi = sum_{k<=4} (A dt)^k / k!` and
/// `Gamma = dt * sum_{k<=3} (A dt)^k / (k+1)! * B`.
pub fn discrete_transition(h: f64, dt: f64) -> (Matrix3<f64>, Matrix3x2<f64>) {
    let a = vehicle_system_matrix(h) * dt;
    let mut phi = Matrix3::identity();
    let mut gamma_poly = Matrix3::identity();
    let mut term = Matrix3::identity();
    for k in 1..=4 {
        term = (term * a) / k as f64;
        phi += term;
        if k <= 3 {
            gamma_poly += term / (k + 1) as f64;
        }
    }
    (phi, gamma_poly * vehicle_input_matrix(h) * dt)
}

/// Discrete correction gain `L` of the predict-correct estimator
/// `x_hat+ = Phi x_hat + Gamma u_hat + L (x_meas - x_hat)`.
///
/// The estimation error then obeys `e+ = (Phi - L) e`, and
/// `L = Phi - diag(exp(p_i dt))` pins the discrete error spectrum to the
/// sampled continuous poles, so each error component decays exactly at its
/// requested rate.
pub fn discrete_correction_gain(h: f64, poles: &[f64; 3], dt: f64) -> Matrix3<f64> {
    let (phi, _) = discrete_transition(h, dt);
    phi - Matrix3::from_diagonal(&Vector3::new(
        (poles[0] * dt).exp(),
        (poles[1] * dt).exp(),
        (poles[2] * dt).exp(),
    ))
}

/// Locally reconstructed predecessor data, never taken from the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputEstimate {
    /// Estimated predecessor velocity (m/s).
    pub w_c_hat: f64,
    /// Estimated predecessor acceleration (m/s^2).
    pub a_c_hat: f64,
}

/// Reconstructs the predecessor inputs from onboard measurements only.
///
/// Velocity comes from the range rate (`w + d_dot`). Acceleration either
/// comes from the known leader tracking law evaluated on that velocity
/// estimate, or from a first-order dirty-derivative filter when no leader
/// model is configured.
#[derive(Debug, Clone)]
pub struct InputEstimator {
    leader_model: bool,
    tau: f64,
    // dirty-derivative filter state (filtered velocity estimate)
    z: Option<f64>,
}

impl InputEstimator {
    pub fn new(cfg: &ObserverConfig) -> Self {
        Self {
            leader_model: cfg.leader_model,
            tau: cfg.filter_tau,
            z: None,
        }
    }

    /// One estimation step. `range_rate` is the measured closing speed
    /// `d_dot`; `w_ref` is the platoon reference velocity at the current
    /// time, used only by the leader-model path.
    pub fn estimate(
        &mut self,
        state: &VehicleState,
        range_rate: f64,
        w_ref: f64,
        leader: &LeaderParams,
        dt: f64,
    ) -> InputEstimate {
        let w_c_hat = state.w + range_rate;
        let a_c_hat = if self.leader_model {
            leader_accel(w_c_hat, w_ref, leader)
        } else {
            let z = self.z.get_or_insert(w_c_hat);
            let a = (w_c_hat - *z) / self.tau;
            *z += dt * a;
            a
        };
        InputEstimate { w_c_hat, a_c_hat }
    }
}

/// One RK4 step of the vehicle estimator
/// `x_hat' = A x_hat + B u_hat + M (x_meas - x_hat)` with inputs held over
/// the step.
pub fn vehicle_observer_step(
    x_hat: Vector3<f64>,
    x_meas: Vector3<f64>,
    u_hat: Vector2<f64>,
    m: &Matrix3<f64>,
    h: f64,
    dt: f64,
) -> Vector3<f64> {
    debug_assert!(dt > 0.0);
    let a = vehicle_system_matrix(h);
    let b = vehicle_input_matrix(h);
    let f = |x: Vector3<f64>| a * x + b * u_hat + m * (x_meas - x);
    let k1 = f(x_hat);
    let k2 = f(x_hat + k1 * (dt / 2.0));
    let k3 = f(x_hat + k2 * (dt / 2.0));
    let k4 = f(x_hat + k3 * dt);
    x_hat + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Vehicle and battery estimator states with their residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualState {
    /// Vehicle residual components `x - x_hat` (m, m/s, m/s^2).
    pub r_v: [f64; 3],
    /// Euclidean norm of `r_v`.
    pub r_v_norm: f64,
    /// Battery voltage residual (V).
    pub r_b: f64,
}

impl ResidualState {
    pub fn zero() -> Self {
        Self {
            r_v: [0.0; 3],
            r_v_norm: 0.0,
            r_b: 0.0,
        }
    }
}

/// Inputs consumed by one observer tick. All values are local, unattackable
/// measurements plus the defender's own action.
#[derive(Debug, Clone, Copy)]
pub struct ObserverInputs {
    /// Platoon reference velocity at the current time (m/s).
    pub w_ref: f64,
    /// Measured ego state at the start of the tick.
    pub x_meas: VehicleState,
    /// Measured range rate `d_dot` at the start of the tick (m/s).
    pub range_rate: f64,
    /// Defender action currently applied (m/s^2).
    pub u_rl: f64,
    /// Measured terminal voltage at the start of the tick (V).
    pub v_meas: f64,
}

/// The full residual generator: vehicle estimator plus a clean replica of the
/// nominal controller/BMS/battery chain.
#[derive(Debug, Clone)]
pub struct DefenderObserver {
    pub cfg: ObserverConfig,
    l_v: Matrix3<f64>,
    estimator: InputEstimator,
    x_hat: Vector3<f64>,
    replica: BatteryState,
    replica_i_cmd: f64,
    residuals: ResidualState,
}

impl DefenderObserver {
    /// Build an observer initialized to the plant's initial conditions.
    pub fn new(
        cfg: ObserverConfig,
        gains: &CaccGains,
        x0: &VehicleState,
        battery0: &BatteryState,
        dt: f64,
    ) -> Result<Self, ConfigError> {
        // reject bad pole requests with the same diagnostics as the
        // continuous placement
        let a = vehicle_system_matrix(gains.h);
        place_observer_gain(&a, &cfg.poles)?;
        Ok(Self {
            l_v: discrete_correction_gain(gains.h, &cfg.poles, dt),
            estimator: InputEstimator::new(&cfg),
            cfg,
            x_hat: Vector3::new(x0.d, x0.w, x0.a),
            replica: battery0.clone(),
            replica_i_cmd: 0.0,
            residuals: ResidualState::zero(),
        })
    }

    pub fn residuals(&self) -> &ResidualState {
        &self.residuals
    }

    /// Whether either residual exceeds its gating threshold.
    pub fn residual_active(&self) -> bool {
        self.residuals.r_v_norm > self.cfg.theta_v || self.residuals.r_b.abs() > self.cfg.theta_b
    }

    pub fn x_hat(&self) -> VehicleState {
        VehicleState {
            d: self.x_hat[0],
            w: self.x_hat[1],
            a: self.x_hat[2],
        }
    }

    pub fn replica_voltage(&self) -> f64 {
        self.replica.v
    }

    /// Advance the estimators one tick. Mirrors the plant's block order with
    /// clean reconstructed inputs in place of the attackable channels.
    pub fn step(
        &mut self,
        inp: &ObserverInputs,
        gains: &CaccGains,
        leader: &LeaderParams,
        params: &BatteryParams,
        dt: f64,
    ) {
        let est = self
            .estimator
            .estimate(&inp.x_meas, inp.range_rate, inp.w_ref, leader, dt);

        // clean required input from measured state and reconstructed inputs
        let (e, _) = cacc::tracking_error(&inp.x_meas, est.w_c_hat, gains);
        let e_dot = (est.w_c_hat - inp.x_meas.w) - gains.h * inp.x_meas.a;
        let u_req_hat = cacc::required_input(e, e_dot, est.a_c_hat, 0.0, gains);
        let p_req_hat = battery::u_to_power(u_req_hat + inp.u_rl, params.kappa);

        // clean BMS and battery replica with voltage-innovation correction
        self.replica_i_cmd = battery::bms_command(
            params,
            self.replica_i_cmd,
            p_req_hat,
            inp.v_meas,
            self.replica_i_cmd,
            dt,
        );
        let surface = self.replica.c.len() - 1;
        self.replica.c[surface] =
            (self.replica.c[surface] + dt * self.cfg.m_b * self.residuals.r_b)
                .clamp(0.0, params.c_max);
        self.replica = battery::battery_step(&self.replica, self.replica_i_cmd, params, dt);
        let u_hat = battery::power_to_u(battery::delivered_power(&self.replica), params.kappa);

        // predict with the pure plant model (same RK4 as the ego), then
        // apply the discrete output-injection correction; mirror the plant's
        // no-reverse clamp so the estimator tracks it bit for bit at stops
        let x_meas = Vector3::new(inp.x_meas.d, inp.x_meas.w, inp.x_meas.a);
        let predicted = vehicle_observer_step(
            self.x_hat,
            x_meas,
            Vector2::new(est.w_c_hat, u_hat),
            &Matrix3::zeros(),
            gains.h,
            dt,
        );
        self.x_hat = predicted + self.l_v * (x_meas - self.x_hat);
        self.x_hat[1] = self.x_hat[1].max(0.0);
    }

    /// Refresh the residuals against the plant state after both it and the
    /// observer have advanced.
    pub fn update_residuals(&mut self, x_plant: &VehicleState, v_plant: f64) {
        let r = [
            x_plant.d - self.x_hat[0],
            x_plant.w - self.x_hat[1],
            x_plant.a - self.x_hat[2],
        ];
        self.residuals = ResidualState {
            r_v: r,
            r_v_norm: (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt(),
            r_b: v_plant - self.replica.v,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn placement_hits_requested_poles() {
        let a = vehicle_system_matrix(0.6);
        let poles = [-2.0, -3.0, -4.0];
        let m = place_observer_gain(&a, &poles).unwrap();
        let mut eig: Vec<f64> = (a - m).complex_eigenvalues().iter().map(|z| z.re).collect();
        let im_max = (a - m)
            .complex_eigenvalues()
            .iter()
            .map(|z| z.im.abs())
            .fold(0.0, f64::max);
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!(im_max < 1e-9);
        for (got, want) in eig.iter().zip([-4.0, -3.0, -2.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn placement_is_identity_for_matching_spectrum() {
        let a = Matrix3::from_diagonal(&Vector3::new(-1.0, -2.0, -3.0));
        let m = place_observer_gain(&a, &[-2.0, -1.0, -3.0]).unwrap();
        assert_eq!(m, Matrix3::zeros());
    }

    #[test]
    fn placement_is_idempotent() {
        let a = vehicle_system_matrix(0.6);
        let poles = [-2.0, -2.5, -3.0];
        let m1 = place_observer_gain(&a, &poles).unwrap();
        let placed = a - m1;
        // re-requesting the same spectrum on the placed system is a no-op
        let m2 = place_observer_gain(&placed, &poles).unwrap();
        assert_eq!(m2, Matrix3::zeros());
    }

    #[test]
    fn placement_rejects_bad_poles() {
        let a = vehicle_system_matrix(0.6);
        assert!(place_observer_gain(&a, &[-1.0, -1.0, -2.0]).is_err());
        assert!(place_observer_gain(&a, &[1.0, -1.0, -2.0]).is_err());
    }

    #[test]
    fn residual_decay_matches_eigen_oracle() {
        // with zero forcing the error obeys r' = (A - M) r; the placed
        // dynamics are diagonal so each component decays at its own pole
        let h = 0.6;
        let poles = [-2.0, -2.5, -3.0];
        let a = vehicle_system_matrix(h);
        let m = place_observer_gain(&a, &poles).unwrap();
        let x_meas = Vector3::new(20.0, 15.0, 0.0);
        let mut x_hat = Vector3::new(19.0, 14.5, 0.3);
        let r0 = x_meas - x_hat;
        let dt = 0.01;
        let t_end = 2.0f64;
        let u = Vector2::new(15.0, 0.0);
        let n = (t_end / dt).round() as usize;
        for _ in 0..n {
            x_hat = vehicle_observer_step(x_hat, x_meas, u, &m, h, dt);
        }
        // the constant-measurement setup adds a forced offset only through
        // B u and A x_meas; subtract the particular solution by comparing
        // against the same recursion started at zero error
        let mut x_ref = x_meas;
        for _ in 0..n {
            x_ref = vehicle_observer_step(x_ref, x_meas, u, &m, h, dt);
        }
        let r = (x_meas - x_hat) - (x_meas - x_ref);
        for i in 0..3 {
            let oracle = r0[i] * (poles[i] * t_end).exp();
            assert_relative_eq!(r[i], oracle, epsilon = 1e-6);
        }
    }

    #[test]
    fn discrete_transition_matches_analytic_exponential() {
        // closed-form solution of d' = w_c - w, w' = a, a' = -a/h over one
        // step with zero inputs
        let h = 0.6;
        let dt = 0.01;
        let (phi, _) = discrete_transition(h, dt);
        let x0 = Vector3::new(3.0, -2.0, 5.0);
        let x1 = phi * x0;
        let ea = (-dt / h).exp();
        let a = x0[2] * ea;
        let w = x0[1] + x0[2] * h * (1.0 - ea);
        let d = x0[0] - x0[1] * dt - x0[2] * h * (dt - h * (1.0 - ea));
        assert_relative_eq!(x1[2], a, epsilon = 1e-9);
        assert_relative_eq!(x1[1], w, epsilon = 1e-9);
        assert_relative_eq!(x1[0], d, epsilon = 1e-9);
    }

    #[test]
    fn discrete_transition_matches_rk4_step() {
        // Phi/Gamma are exactly what one RK4 step computes for the linear
        // model under held inputs
        let h = 0.6;
        let dt = 0.01;
        let (phi, gamma) = discrete_transition(h, dt);
        let x0 = Vector3::new(1.5, -0.5, 2.0);
        let u = Vector2::new(14.0, 3.0);
        let via_rk4 = vehicle_observer_step(x0, x0, u, &Matrix3::zeros(), h, dt);
        let via_matrices = phi * x0 + gamma * u;
        for i in 0..3 {
            assert_relative_eq!(via_rk4[i], via_matrices[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn correction_gain_gives_exact_per_pole_decay() {
        let h = 0.6;
        let dt = 0.01;
        let poles = [-2.0, -2.5, -3.0];
        let (phi, _) = discrete_transition(h, dt);
        let l = discrete_correction_gain(h, &poles, dt);
        let e0 = Vector3::new(1.0, -0.5, 0.25);
        let mut e = e0;
        let n = 200;
        for _ in 0..n {
            e = (phi - l) * e;
        }
        let t = n as f64 * dt;
        for i in 0..3 {
            assert_relative_eq!(e[i], e0[i] * (poles[i] * t).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn input_estimator_exact_at_steady_cruise() {
        let cfg = ObserverConfig::default();
        let leader = LeaderParams {
            k_lead: 1.0,
            a_min: -10.0,
            a_max: 10.0,
        };
        let mut est = InputEstimator::new(&cfg);
        let s = VehicleState {
            d: 14.0,
            w: 15.0,
            a: 0.0,
        };
        let out = est.estimate(&s, 0.0, 15.0, &leader, 0.01);
        assert_eq!(out.w_c_hat, 15.0);
        assert_eq!(out.a_c_hat, 0.0);
    }

    #[test]
    fn filtered_estimator_converges_on_accelerating_predecessor() {
        // predecessor at constant 1 m/s^2; dirty derivative converges to
        // 1 +/- 0.05 within five filter time constants
        let cfg = ObserverConfig {
            leader_model: false,
            ..ObserverConfig::default()
        };
        let leader = LeaderParams {
            k_lead: 1.0,
            a_min: -10.0,
            a_max: 10.0,
        };
        let mut est = InputEstimator::new(&cfg);
        let dt = 0.01;
        let mut out = None;
        let n = (5.0 * cfg.filter_tau / dt).round() as usize;
        for k in 0..=n {
            let t = k as f64 * dt;
            let w_pred = 10.0 + 1.0 * t;
            let s = VehicleState {
                d: 14.0,
                w: 10.0,
                a: 0.0,
            };
            out = Some(est.estimate(&s, w_pred - s.w, 0.0, &leader, dt));
        }
        assert!((out.unwrap().a_c_hat - 1.0).abs() <= 0.05);
    }
}
