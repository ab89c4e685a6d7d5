//! Grid-world Dec-POMDPs with sight-limited observations.
//!
//! Two cooperative tasks share one state layout (agents, then prey, then
//! landmarks, each on an integer cell): predator-prey, where prey are caught
//! by coordinated tagging, and spread, where agents cover landmarks. All
//! agents receive the same team reward.

pub mod config;
pub mod episode;
pub mod observation;
pub mod oracle;
pub mod world;

pub use config::{EnvConfig, Task};
pub use episode::{Episode, EpisodeBatch};
pub use observation::{observe, observe_all, EntitySlot, ObsLayout, ObservationFrame};
pub use oracle::{oracle_value, random_policy_value, Oracle, OraclePolicy};
pub use world::{env_reset, state_dim, transition, Action, EntityKind, Env, Pos, StepOutcome, WorldState};
