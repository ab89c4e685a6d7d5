pub mod diffcore;
pub mod envkit;
pub mod perception;
pub mod belief;
pub mod action_portrait;
pub mod dual_filter;
pub mod agent_mixer;
pub mod trainer;
pub mod error;

pub use error::{Error, Result};
