//! Closed-loop simulation of a battery-electric CACC ego vehicle under
//! coordinated false-data injection, with observer-based residual detection
//! and a PPO-trained corrective defender.
//!
//! The crate is organized along the signal path: `platoon` (leader + ego
//! dynamics), `cacc` (tracking law), `battery` (BMS + single-particle pack),
//! `attack` (injection profiles), `observer` (residual generators), `rl`
//! (defender policy and training), `sim` (the wired loop), with `config`,
//! `report`, and `error` as support.

pub mod attack;
pub mod battery;
pub mod cacc;
pub mod config;
pub mod error;
pub mod observer;
pub mod platoon;
pub mod report;
pub mod rl;
pub mod sim;

pub use config::ScenarioConfig;
pub use error::{ConfigError, SimError};
pub use sim::{SimTrace, World};
