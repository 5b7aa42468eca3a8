//! Declarative attack profiles for the two injection surfaces: the
//! communicated predecessor acceleration and the battery current sensor.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTarget {
    /// Additive corruption of the communicated acceleration (m/s^2).
    AccelComm,
    /// Additive corruption of the measured battery current (A).
    CurrentSensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackShape {
    Step,
    Ramp,
    Pulse,
    Sine,
}

/// A single time-parameterized injection signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackProfile {
    pub target: AttackTarget,
    pub shape: AttackShape,
    /// Peak value (m/s^2 or A, per target).
    pub magnitude: f64,
    /// Onset time (s); steps are left-closed at onset.
    #[serde(default)]
    pub t_start: f64,
    /// End time (s); open-ended when absent. Required for ramp and pulse.
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Sine frequency (Hz); required for sine.
    #[serde(default)]
    pub frequency: Option<f64>,
}

impl AttackProfile {
    fn active(&self, t: f64) -> bool {
        t >= self.t_start && self.t_end.is_none_or(|end| t < end)
    }

    fn value(&self, t: f64) -> f64 {
        if !self.active(t) {
            return 0.0;
        }
        match self.shape {
            AttackShape::Step | AttackShape::Pulse => self.magnitude,
            AttackShape::Ramp => {
                let end = self.t_end.expect("validated at load");
                self.magnitude * (t - self.t_start) / (end - self.t_start)
            }
            AttackShape::Sine => {
                let f = self.frequency.expect("validated at load");
                self.magnitude * (2.0 * std::f64::consts::PI * f * (t - self.t_start)).sin()
            }
        }
    }

    fn validate(&self, path: &str, errs: &mut Vec<String>) {
        if !self.magnitude.is_finite() {
            errs.push(format!("{path}.magnitude: must be finite"));
        }
        if self.t_start < 0.0 || !self.t_start.is_finite() {
            errs.push(format!("{path}.t_start: must be >= 0"));
        }
        if let Some(end) = self.t_end {
            if end <= self.t_start {
                errs.push(format!("{path}.t_end: must exceed t_start"));
            }
        }
        match self.shape {
            AttackShape::Ramp | AttackShape::Pulse if self.t_end.is_none() => {
                errs.push(format!("{path}.t_end: required for ramp/pulse"));
            }
            AttackShape::Sine if self.frequency.is_none_or(|f| f <= 0.0) => {
                errs.push(format!("{path}.frequency: required and > 0 for sine"));
            }
            _ => {}
        }
    }
}

/// The full adversarial scenario: any combination of profiles, empty meaning
/// nominal operation. At most one profile per target may be active at any
/// instant; overlaps are rejected at load time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttackSet {
    pub profiles: Vec<AttackProfile>,
}

impl AttackSet {
    pub fn new(profiles: Vec<AttackProfile>) -> Result<Self, ConfigError> {
        let set = Self { profiles };
        let mut errs = Vec::new();
        set.validate("attack", &mut errs);
        if errs.is_empty() {
            Ok(set)
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    pub fn validate(&self, path: &str, errs: &mut Vec<String>) {
        for (i, p) in self.profiles.iter().enumerate() {
            p.validate(&format!("{path}[{i}]"), errs);
        }
        for (i, a) in self.profiles.iter().enumerate() {
            for (j, b) in self.profiles.iter().enumerate().skip(i + 1) {
                if a.target == b.target && intervals_overlap(a, b) {
                    errs.push(format!(
                        "{path}[{i}]/{path}[{j}]: overlapping profiles on the same target"
                    ));
                }
            }
        }
    }

    /// Injection values `(delta_a, delta_I)` at time `t`.
    pub fn evaluate(&self, t: f64) -> (f64, f64) {
        let mut delta_a = 0.0;
        let mut delta_i = 0.0;
        for p in &self.profiles {
            match p.target {
                AttackTarget::AccelComm => delta_a += p.value(t),
                AttackTarget::CurrentSensor => delta_i += p.value(t),
            }
        }
        (delta_a, delta_i)
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

fn intervals_overlap(a: &AttackProfile, b: &AttackProfile) -> bool {
    let a_end = a.t_end.unwrap_or(f64::INFINITY);
    let b_end = b.t_end.unwrap_or(f64::INFINITY);
    a.t_start < b_end && b.t_start < a_end
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(target: AttackTarget, magnitude: f64, t_start: f64) -> AttackProfile {
        AttackProfile {
            target,
            shape: AttackShape::Step,
            magnitude,
            t_start,
            t_end: None,
            frequency: None,
        }
    }

    #[test]
    fn empty_set_is_nominal() {
        let set = AttackSet::default();
        assert_eq!(set.evaluate(12.0), (0.0, 0.0));
    }

    #[test]
    fn coordinated_steps_from_zero() {
        let set = AttackSet::new(vec![
            step(AttackTarget::AccelComm, 10.0, 0.0),
            step(AttackTarget::CurrentSensor, -2.0, 0.0),
        ])
        .unwrap();
        for t in [0.0, 0.5, 100.0] {
            assert_eq!(set.evaluate(t), (10.0, -2.0));
        }
    }

    #[test]
    fn step_is_left_closed_at_onset() {
        let set = AttackSet::new(vec![step(AttackTarget::AccelComm, 7.0, 5.0)]).unwrap();
        assert_eq!(set.evaluate(4.99).0, 0.0);
        assert_eq!(set.evaluate(5.0).0, 7.0);
    }

    #[test]
    fn ramp_and_sine_shapes() {
        let ramp = AttackProfile {
            target: AttackTarget::AccelComm,
            shape: AttackShape::Ramp,
            magnitude: 10.0,
            t_start: 0.0,
            t_end: Some(10.0),
            frequency: None,
        };
        let set = AttackSet::new(vec![ramp]).unwrap();
        assert_eq!(set.evaluate(5.0).0, 5.0);
        assert_eq!(set.evaluate(10.0).0, 0.0); // closed interval ends

        let sine = AttackProfile {
            target: AttackTarget::CurrentSensor,
            shape: AttackShape::Sine,
            magnitude: 2.0,
            t_start: 1.0,
            t_end: None,
            frequency: Some(0.25),
        };
        let set = AttackSet::new(vec![sine]).unwrap();
        assert!((set.evaluate(2.0).1 - 2.0).abs() < 1e-12); // quarter period
    }

    #[test]
    fn single_target_reproduces_special_cases() {
        let set = AttackSet::new(vec![step(AttackTarget::CurrentSensor, -2.0, 0.0)]).unwrap();
        assert_eq!(set.evaluate(1.0), (0.0, -2.0));
    }

    #[test]
    fn overlapping_same_target_rejected() {
        let err = AttackSet::new(vec![
            step(AttackTarget::AccelComm, 1.0, 0.0),
            step(AttackTarget::AccelComm, 2.0, 50.0),
        ]);
        assert!(err.is_err());
        // disjoint windows on the same target are fine
        let mut first = step(AttackTarget::AccelComm, 1.0, 0.0);
        first.t_end = Some(10.0);
        assert!(AttackSet::new(vec![first, step(AttackTarget::AccelComm, 2.0, 10.0)]).is_ok());
    }

    #[test]
    fn ramp_without_end_rejected() {
        let mut p = step(AttackTarget::AccelComm, 1.0, 0.0);
        p.shape = AttackShape::Ramp;
        assert!(AttackSet::new(vec![p]).is_err());
    }
}
