//! Learning-based defender: a small actor-critic policy trained from scratch
//! with proximal policy optimization against randomized attack scenarios.

pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod train;

/// Spacing-error band considered acceptable by the reward (m).
pub const REWARD_BAND: f64 = 1.0;
/// Per-decision reward inside the band.
pub const REWARD_IN_BAND: f64 = 10.0;
/// Per-decision penalty outside the band.
pub const REWARD_OUT_OF_BAND: f64 = -1000.0;

/// Sparse band reward on the spacing error.
pub fn reward(e: f64) -> f64 {
    if e.abs() <= REWARD_BAND {
        REWARD_IN_BAND
    } else {
        REWARD_OUT_OF_BAND
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_band_edges() {
        assert_eq!(reward(0.0), 10.0);
        assert_eq!(reward(1.0), 10.0);
        assert_eq!(reward(-1.0), 10.0);
        assert_eq!(reward(1.0001), -1000.0);
        assert_eq!(reward(-7.0), -1000.0);
    }
}
