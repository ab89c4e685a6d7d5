use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Predators tag randomly walking prey; a prey is captured when at least
    /// `capture_threshold` predators within one cell tag it in the same step.
    PredatorPrey,
    /// Agents spread out to cover static landmarks.
    Spread,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub task: Task,
    pub grid_size: usize,
    pub n_agents: usize,
    pub n_prey: usize,
    pub n_landmarks: usize,
    pub sight_radius: usize,
    pub horizon: usize,
    pub capture_threshold: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            task: Task::PredatorPrey,
            grid_size: 7,
            n_agents: 4,
            n_prey: 2,
            n_landmarks: 0,
            sight_radius: 2,
            horizon: 50,
            capture_threshold: 2,
        }
    }
}

impl EnvConfig {
    pub fn predator_prey(grid_size: usize, n_agents: usize, n_prey: usize, sight_radius: usize) -> Self {
        EnvConfig {
            grid_size,
            n_agents,
            n_prey,
            sight_radius,
            ..EnvConfig::default()
        }
    }

    pub fn spread(grid_size: usize, n_agents: usize, n_landmarks: usize, sight_radius: usize) -> Self {
        EnvConfig {
            task: Task::Spread,
            grid_size,
            n_agents,
            n_prey: 0,
            n_landmarks,
            sight_radius,
            ..EnvConfig::default()
        }
    }

    /// Checks the limits required for a playable environment.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.grid_size >= 4, Config, "grid size {} < 4", self.grid_size);
        ensure!(self.n_agents >= 2, Config, "need at least 2 agents, got {}", self.n_agents);
        ensure!(self.sight_radius >= 1, Config, "sight radius must be at least 1");
        self.validate_entities()
    }

    /// Looser limits accepted by the exact oracle, which also solves
    /// degenerate single-agent and 3×3 debug instances.
    pub fn validate_for_oracle(&self) -> Result<()> {
        ensure!(self.grid_size >= 2, Config, "grid size {} < 2", self.grid_size);
        ensure!(self.n_agents >= 1, Config, "need at least 1 agent");
        self.validate_entities()
    }

    fn validate_entities(&self) -> Result<()> {
        ensure!(self.grid_size <= 1 << 14, Config, "grid size {} too large", self.grid_size);
        match self.task {
            Task::PredatorPrey => {
                ensure!(self.n_prey >= 1, Config, "predator-prey needs at least one prey");
                ensure!(self.n_landmarks == 0, Config, "predator-prey has no landmarks");
                ensure!(self.capture_threshold >= 1, Config, "capture threshold must be at least 1");
            }
            Task::Spread => {
                ensure!(self.n_landmarks >= 1, Config, "spread needs at least one landmark");
                ensure!(self.n_prey == 0, Config, "spread has no prey");
            }
        }
        Ok(())
    }

    pub fn n_entities(&self) -> usize {
        self.n_agents + self.n_prey + self.n_landmarks
    }

    /// Size of each agent's action set (the tag action exists only in
    /// predator-prey).
    pub fn n_actions(&self) -> usize {
        match self.task {
            Task::PredatorPrey => 6,
            Task::Spread => 5,
        }
    }
}
