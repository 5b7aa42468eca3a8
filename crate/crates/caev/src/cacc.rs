//! CACC tracking law: spacing error and required acceleration input.

use serde::{Deserialize, Serialize};

use crate::platoon::VehicleState;

/// CACC gains and spacing policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaccGains {
    /// Proportional gain (1/s^2).
    pub k_p: f64,
    /// Derivative gain (1/s).
    pub k_d: f64,
    /// Time headway (s).
    pub h: f64,
    /// Standstill distance (m).
    pub d_r: f64,
}

/// Communicated predecessor data, possibly attacked on the acceleration
/// channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommInputs {
    /// Communicated predecessor velocity (m/s).
    pub w_c: f64,
    /// Communicated predecessor acceleration (m/s^2).
    pub a_c: f64,
}

/// Spacing error `e = d - h*w - d_r` and its derivative
/// `e_dot = (w_c - w) - h*a`.
///
/// `e_dot` is evaluated analytically from the measured signals rather than
/// by differencing `e`.
pub fn tracking_error(state: &VehicleState, w_c: f64, gains: &CaccGains) -> (f64, f64) {
    let e = state.d - gains.h * state.w - gains.d_r;
    let e_dot = (w_c - state.w) - gains.h * state.a;
    (e, e_dot)
}

/// Required acceleration input `k_p*e + k_d*e_dot + a_c + delta_a`.
///
/// With `delta_a = 0` this is the nominal CACC law; a nonzero `delta_a` is
/// the corrupted-communication variant.
pub fn required_input(e: f64, e_dot: f64, a_c: f64, delta_a: f64, gains: &CaccGains) -> f64 {
    gains.k_p * e + gains.k_d * e_dot + a_c + delta_a
}
