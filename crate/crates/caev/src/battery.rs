//! Battery pack: radial lithium diffusion in the anode particle (spherical
//! finite differences), terminal voltage, the BMS current controller, and the
//! acceleration/power converters.
//!
//! Sign convention: positive current discharges the pack and drains the anode
//! surface.

use log::warn;
use serde::{Deserialize, Serialize};

/// Which current-control law the BMS runs.
///
/// `Proportional` is the literal one-shot law `I = K_b (P_req - P_f)` closed
/// through a unit delay on the measured current; at its fixed point the
/// delivered power is a fixed fraction of the request. `Integral` trims the
/// command until the measured feedback power matches the request, so the
/// delivered power tracks `P_req` with zero steady-state error. The bundled
/// scenarios use `Integral`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BmsMode {
    Proportional,
    Integral,
}

/// Battery model and BMS parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteryParams {
    /// Radial discretization nodes (>= 3).
    pub n_shells: usize,
    /// Solid-phase diffusivity (m^2/s).
    #[serde(rename = "D")]
    pub diffusivity: f64,
    /// Particle radius (m).
    pub r_a: f64,
    /// Current-to-surface-gradient gain (mol/(m^4 A)).
    pub gamma_b: f64,
    /// Open-circuit voltage polynomial over normalized surface concentration,
    /// ascending powers (V).
    pub ocv_coeffs: Vec<f64>,
    /// Ohmic resistance (ohm).
    #[serde(rename = "R0")]
    pub r0: f64,
    /// Proportional current-controller gain (A/W).
    #[serde(rename = "K_b")]
    pub k_b: f64,
    /// Integral current-controller gain (A/(W s)), used in `Integral` mode.
    #[serde(rename = "K_i")]
    pub k_i: f64,
    /// BMS control law.
    pub controller: BmsMode,
    /// Acceleration-to-power gain (W s^2/m).
    pub kappa: f64,
    /// Saturation concentration (mol/m^3).
    pub c_max: f64,
    /// Initial normalized concentration.
    pub soc_init: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            n_shells: 10,
            diffusivity: 1e-14,
            r_a: 1e-5,
            gamma_b: 1e7,
            ocv_coeffs: vec![3.0, 0.55, 0.25, -0.10, 0.0],
            r0: 0.005,
            k_b: 0.1,
            k_i: 20.0,
            controller: BmsMode::Integral,
            kappa: 10.0,
            c_max: 30_000.0,
            soc_init: 0.5,
        }
    }
}

impl BatteryParams {
    /// Open-circuit voltage at normalized surface concentration `x`.
    pub fn ocv(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        self.ocv_coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Battery state: shell concentrations, circulating current, terminal
/// voltage, and the previous feedback power seen by the BMS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    /// Shell concentrations, center to surface (mol/m^3).
    pub c: Vec<f64>,
    /// Circulating current (A).
    #[serde(rename = "I")]
    pub i: f64,
    /// Terminal voltage (V).
    #[serde(rename = "V")]
    pub v: f64,
    /// Feedback power at the previous step (W).
    pub p_f_prev: f64,
}

impl BatteryState {
    /// Fresh state at the configured initial concentration, zero current.
    pub fn init(params: &BatteryParams) -> Self {
        let c0 = params.soc_init * params.c_max;
        let mut s = Self {
            c: vec![c0; params.n_shells],
            i: 0.0,
            v: 0.0,
            p_f_prev: 0.0,
        };
        s.v = terminal_voltage(&s.c, 0.0, params);
        s
    }

    pub fn c_surf(&self) -> f64 {
        self.c[self.c.len() - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.i.is_finite() && self.v.is_finite() && self.c.iter().all(|x| x.is_finite())
    }
}

/// Convert a required acceleration into a power request: `P = kappa * u`.
pub fn u_to_power(u_req: f64, kappa: f64) -> f64 {
    kappa * u_req
}

/// Convert delivered power back into an acceleration input: `u = P / kappa`.
pub fn power_to_u(p: f64, kappa: f64) -> f64 {
    debug_assert!(kappa != 0.0);
    p / kappa
}

/// One-shot proportional current command `I = K_b (P_req - V * I_meas)`,
/// where the measured current is the previous step's circulating current plus
/// the sensor attack.
pub fn current_command(p_req: f64, v: f64, i_meas_prev: f64, delta_i: f64, k_b: f64) -> f64 {
    k_b * (p_req - v * (i_meas_prev + delta_i))
}

/// Integral current command: trims the previous command until the measured
/// feedback power matches the request.
pub fn current_command_integral(
    i_cmd_prev: f64,
    p_req: f64,
    v_meas: f64,
    i_meas: f64,
    k_i: f64,
    dt: f64,
) -> f64 {
    i_cmd_prev + dt * k_i * (p_req - v_meas * i_meas)
}

/// BMS step dispatching on the configured control law.
///
/// `i_cmd_prev` is the controller's own previous command (clean, internal);
/// `i_meas` is the attacked current-sensor reading used in the feedback term.
pub fn bms_command(
    params: &BatteryParams,
    i_cmd_prev: f64,
    p_req: f64,
    v_meas: f64,
    i_meas: f64,
    dt: f64,
) -> f64 {
    match params.controller {
        BmsMode::Proportional => current_command(p_req, v_meas, i_meas, 0.0, params.k_b),
        BmsMode::Integral => {
            current_command_integral(i_cmd_prev, p_req, v_meas, i_meas, params.k_i, dt)
        }
    }
}

/// Terminal voltage `V = OCV(c_surf / c_max) - R0 * I`.
pub fn terminal_voltage(c: &[f64], i: f64, params: &BatteryParams) -> f64 {
    params.ocv(c[c.len() - 1] / params.c_max) - params.r0 * i
}

/// Time derivative of the shell concentrations under current `i`.
///
/// Central finite differences of the spherical diffusion equation with a
/// symmetry condition at the center and the flux condition
/// `dc/dr (r_a) = -gamma_b * I` at the surface.
pub fn concentration_derivative(c: &[f64], i: f64, params: &BatteryParams, out: &mut [f64]) {
    let n = c.len();
    let dr = params.r_a / (n - 1) as f64;
    let d = params.diffusivity;
    let g = -params.gamma_b * i; // surface gradient

    // center: limit of the spherical Laplacian
    out[0] = 6.0 * d * (c[1] - c[0]) / (dr * dr);
    for k in 1..n - 1 {
        let r = k as f64 * dr;
        out[k] = d * ((c[k + 1] - 2.0 * c[k] + c[k - 1]) / (dr * dr)
            + (c[k + 1] - c[k - 1]) / (r * dr));
    }
    // surface: ghost node c[n] = c[n-2] + 2 dr g
    out[n - 1] = d * (2.0 * (c[n - 2] - c[n - 1]) / (dr * dr)
        + 2.0 * g / dr
        + 2.0 * g / params.r_a);
}

/// Advance the diffusion state one RK4 step under constant current `i`, then
/// refresh the terminal voltage.
///
/// Concentrations are clamped to `[0, c_max]`; clamping logs a warning.
pub fn battery_step(state: &BatteryState, i: f64, params: &BatteryParams, dt: f64) -> BatteryState {
    debug_assert!(dt > 0.0);
    let n = state.c.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    concentration_derivative(&state.c, i, params, &mut k1);
    for j in 0..n {
        tmp[j] = state.c[j] + 0.5 * dt * k1[j];
    }
    concentration_derivative(&tmp, i, params, &mut k2);
    for j in 0..n {
        tmp[j] = state.c[j] + 0.5 * dt * k2[j];
    }
    concentration_derivative(&tmp, i, params, &mut k3);
    for j in 0..n {
        tmp[j] = state.c[j] + dt * k3[j];
    }
    concentration_derivative(&tmp, i, params, &mut k4);

    let mut clamped = false;
    let mut c = vec![0.0; n];
    for j in 0..n {
        let v = state.c[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        if v < 0.0 || v > params.c_max {
            clamped = true;
        }
        c[j] = v.clamp(0.0, params.c_max);
    }
    if clamped {
        warn!("battery concentration clamped to [0, c_max]");
    }

    let v = terminal_voltage(&c, i, params);
    BatteryState {
        c,
        i,
        v,
        p_f_prev: v * i,
    }
}

/// Power actually delivered by the battery, `P = V * I`, using the true
/// circulating current (never the attacked measurement).
pub fn delivered_power(state: &BatteryState) -> f64 {
    state.v * state.i
}

/// Total lithium content by spherical trapezoidal quadrature (mol).
/// Used by the conservation checks.
pub fn total_lithium(c: &[f64], r_a: f64) -> f64 {
    // integrate the piecewise-linear interpolant of c against r^2 exactly;
    // plain trapezoid on c * r^2 has a quadrature bias comparable to the
    // quasi-steady surface offset itself
    let n = c.len();
    let dr = r_a / (n - 1) as f64;
    let mut acc = 0.0;
    for k in 0..n - 1 {
        let r0 = k as f64 * dr;
        let r1 = (k + 1) as f64 * dr;
        let slope = (c[k + 1] - c[k]) / dr;
        let i3 = (r1.powi(3) - r0.powi(3)) / 3.0;
        let i4 = (r1.powi(4) - r0.powi(4)) / 4.0;
        acc += c[k] * i3 + slope * (i4 - r0 * i3);
    }
    4.0 * std::f64::consts::PI * acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn u_power_table_values() {
        assert_eq!(u_to_power(0.0, 10.0), 0.0);
        assert_eq!(u_to_power(2.0, 10.0), 20.0);
        assert_eq!(power_to_u(0.0, 10.0), 0.0);
        assert_eq!(power_to_u(20.0, 10.0), 2.0);
    }

    proptest! {
        #[test]
        fn converters_are_inverses(u in -50.0..50.0f64) {
            let p = u_to_power(u, 10.0);
            prop_assert!((power_to_u(p, 10.0) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn proportional_command_arithmetic() {
        assert_eq!(current_command(0.0, 4.0, 0.0, 0.0, 0.1), 0.0);
        assert_eq!(current_command(100.0, 4.0, 20.0, 0.0, 0.1), 2.0);
        // delta_i = -2 shifts the command by +K_b * V * 2
        let clean = current_command(50.0, 4.0, 10.0, 0.0, 0.1);
        let attacked = current_command(50.0, 4.0, 10.0, -2.0, 0.1);
        assert_relative_eq!(attacked - clean, 0.1 * 4.0 * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn proportional_loop_converges_to_fixed_point() {
        // delayed feedback converges to I = K_b (P_req - V I) within 1% in
        // <= 50 steps
        let k_b = 0.1f64;
        let v = 3.7;
        let p_req = 40.0;
        let expect = k_b * p_req / (1.0 + k_b * v);
        let mut i = 0.0;
        let mut steps = 0;
        while (i - expect).abs() > 0.01 * expect.abs() {
            i = current_command(p_req, v, i, 0.0, k_b);
            steps += 1;
            assert!(steps <= 50, "did not converge");
        }
        assert!((k_b * (p_req - v * expect) - expect).abs() < 1e-12);
    }

    #[test]
    fn integral_loop_tracks_power_request() {
        let params = BatteryParams::default();
        let v = 3.3;
        let p_req = 25.0;
        let mut i_cmd = 0.0;
        for _ in 0..500 {
            i_cmd = current_command_integral(i_cmd, p_req, v, i_cmd, params.k_i, 0.01);
        }
        assert_relative_eq!(v * i_cmd, p_req, epsilon = 1e-9);
    }

    #[test]
    fn uniform_concentration_zero_current_is_steady() {
        let params = BatteryParams::default();
        let s = BatteryState::init(&params);
        let out = battery_step(&s, 0.0, &params, 0.01);
        for (a, b) in s.c.iter().zip(out.c.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn delivered_power_uses_actual_current() {
        let params = BatteryParams::default();
        let mut s = BatteryState::init(&params);
        assert_eq!(delivered_power(&s), 0.0);
        s.i = 2.0;
        s.v = 4.0;
        assert_eq!(delivered_power(&s), 8.0);
        // the attacked measurement I + delta_I never enters delivered power
        let delta_i = -2.0;
        assert!(delivered_power(&s) != s.v * (s.i + delta_i));
    }

    #[test]
    fn no_attack_feedback_power_equals_delivered() {
        let params = BatteryParams::default();
        let mut s = BatteryState::init(&params);
        s = battery_step(&s, 1.5, &params, 0.01);
        assert_eq!(s.p_f_prev, delivered_power(&s));
    }

    #[test]
    fn lithium_conservation_under_constant_current() {
        // stored lithium changes by the analytic boundary-flux integral
        let params = BatteryParams {
            n_shells: 30,
            ..BatteryParams::default()
        };
        let dt = 0.01;
        let i = 2.0;
        let mut s = BatteryState::init(&params);
        // settle into the quasi-steady profile first
        for _ in 0..1000 {
            s = battery_step(&s, i, &params, dt);
        }
        let n0 = total_lithium(&s.c, params.r_a);
        let steps = 5000;
        for _ in 0..steps {
            s = battery_step(&s, i, &params, dt);
        }
        let n1 = total_lithium(&s.c, params.r_a);
        let analytic = -4.0
            * std::f64::consts::PI
            * params.r_a.powi(2)
            * params.diffusivity
            * params.gamma_b
            * i
            * (steps as f64 * dt);
        assert_relative_eq!(n1 - n0, analytic, max_relative = 0.01);
    }

    #[test]
    fn fine_step_reference_on_current_pulse() {
        let params = BatteryParams::default();
        let i = 5.0;
        let run = |dt: f64| {
            let mut s = BatteryState::init(&params);
            let n = (20.0 / dt).round() as usize;
            for _ in 0..n {
                s = battery_step(&s, i, &params, dt);
            }
            s.c_surf()
        };
        let coarse = run(0.01);
        let fine = run(1e-4);
        assert!((coarse - fine).abs() / fine.abs() < 1e-3);
    }

    #[test]
    fn quasi_steady_profile_matches_parabolic_solution() {
        // under constant current the offset c_surf - c_mean approaches the
        // analytic g * r_a / 5 (g = surface gradient) as the grid refines
        let check = |n_shells: usize| -> f64 {
            let params = BatteryParams {
                n_shells,
                ..BatteryParams::default()
            };
            let i = 2.0;
            let mut s = BatteryState::init(&params);
            // the radial diffusion time constant r_a^2 / (pi^2 D) is ~1000 s,
            // so integrate ~8 of them; the explicit scheme stays stable at
            // this dt because D / dr^2 << 1 / dt
            for _ in 0..40_000 {
                s = battery_step(&s, i, &params, 0.2);
            }
            let c_mean = total_lithium(&s.c, params.r_a)
                / (4.0 / 3.0 * std::f64::consts::PI * params.r_a.powi(3));
            let g = -params.gamma_b * i;
            let analytic = g * params.r_a / 5.0;
            ((s.c_surf() - c_mean) - analytic).abs() / analytic.abs()
        };
        let coarse = check(10);
        assert!(coarse < 0.02, "coarse grid error {coarse}");
        assert!(check(20) < coarse);
    }

    #[test]
    fn ocv_is_monotone_over_range() {
        let params = BatteryParams::default();
        let mut prev = params.ocv(0.0);
        for k in 1..=100 {
            let v = params.ocv(k as f64 / 100.0);
            assert!(v > prev);
            prev = v;
        }
        assert!(params.ocv(0.0) >= 3.0 && params.ocv(1.0) <= 4.2);
    }
}
