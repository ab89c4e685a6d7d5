//! Exact finite-horizon dynamic programming over the full joint state.
//!
//! Treating the Dec-POMDP as a fully observed MDP gives an upper bound on any
//! decentralized policy's return. The same sweep with a uniform average over
//! joint actions instead of a max evaluates the uniformly random policy.

use super::config::{EnvConfig, Task};
use super::world::{apply_agents, apply_prey, reward_and_terminal, Action, Pos, WorldState};
use crate::error::{Error, Result};

/// Largest joint state space the oracle will enumerate.
pub const MAX_ORACLE_STATES: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OraclePolicy {
    Optimal,
    UniformRandom,
}

/// Horizon-`H` values for every joint state.
#[derive(Clone, Debug)]
pub struct Oracle {
    config: EnvConfig,
    cells: usize,
    values: Vec<f64>,
}

/// Number of joint states: every entity on any cell, times prey alive flags.
pub fn state_space_size(config: &EnvConfig) -> u128 {
    let cells = (config.grid_size as u128).pow(2);
    let mut n: u128 = 1;
    for _ in 0..config.n_entities() {
        n = n.saturating_mul(cells);
    }
    n.saturating_mul(1u128 << config.n_prey.min(64))
}

impl Oracle {
    pub fn solve(config: &EnvConfig, policy: OraclePolicy) -> Result<Self> {
        config.validate_for_oracle()?;
        let states = state_space_size(config);
        if states > MAX_ORACLE_STATES {
            return Err(Error::StateSpaceTooLarge {
                states,
                limit: MAX_ORACLE_STATES,
            });
        }
        let n_states = states as usize;
        let cells = config.grid_size * config.grid_size;
        let n_actions = config.n_actions();
        let n_joint = n_actions.pow(config.n_agents as u32);
        let n_prey_outcomes = Action::MOVES.len().pow(config.n_prey as u32);
        let prey_weight = 1.0 / n_prey_outcomes as f64;

        let mut oracle = Oracle {
            config: config.clone(),
            cells,
            values: vec![0.0; n_states],
        };
        let mut next_values = vec![0.0; n_states];
        let mut actions = vec![0usize; config.n_agents];
        let mut prey_moves = vec![Action::Stay; config.n_prey];

        for _ in 0..config.horizon {
            for (s, slot) in next_values.iter_mut().enumerate() {
                let state = oracle.decode(s);
                if config.task == Task::PredatorPrey && state.prey_alive(config) == 0 {
                    *slot = 0.0;
                    continue;
                }
                let mut best = f64::NEG_INFINITY;
                let mut total = 0.0;
                for ja in 0..n_joint {
                    decode_digits(ja, n_actions, &mut actions);
                    let mut moved = state.clone();
                    let captured = apply_agents(config, &mut moved, &actions);
                    let mut q = 0.0;
                    for po in 0..n_prey_outcomes {
                        let mut next = moved.clone();
                        let mut code = po;
                        for m in prey_moves.iter_mut() {
                            *m = Action::MOVES[code % Action::MOVES.len()];
                            code /= Action::MOVES.len();
                        }
                        apply_prey(config, &mut next, &prey_moves);
                        let (reward, _) = reward_and_terminal(config, &next, captured);
                        let done = config.task == Task::PredatorPrey && next.prey_alive(config) == 0;
                        let cont = if done { 0.0 } else { oracle.values[oracle.encode(&next)] };
                        q += prey_weight * (reward + cont);
                    }
                    best = best.max(q);
                    total += q;
                }
                *slot = match policy {
                    OraclePolicy::Optimal => best,
                    OraclePolicy::UniformRandom => total / n_joint as f64,
                };
            }
            std::mem::swap(&mut oracle.values, &mut next_values);
        }
        Ok(oracle)
    }

    /// Value of `state` with the full horizon remaining.
    pub fn value(&self, state: &WorldState) -> f64 {
        self.values[self.encode(state)]
    }

    /// Mean value over the reset distribution (independent uniform cells,
    /// every prey alive).
    pub fn expected_initial_value(&self) -> f64 {
        let placements = self.cells.pow(self.config.n_entities() as u32);
        let alive_bits = (1usize << self.config.n_prey) - 1;
        let offset = alive_bits * placements;
        let sum: f64 = (0..placements).map(|p| self.values[offset + p]).sum();
        sum / placements as f64
    }

    fn encode(&self, state: &WorldState) -> usize {
        let g = self.config.grid_size;
        let mut idx = 0usize;
        for p in state.positions.iter().rev() {
            idx = idx * self.cells + (p.x as usize + p.y as usize * g);
        }
        let mut bits = 0usize;
        for (k, p) in state.prey_range(&self.config).enumerate() {
            if state.alive[p] {
                bits |= 1 << k;
            }
        }
        bits * self.cells.pow(self.config.n_entities() as u32) + idx
    }

    fn decode(&self, mut idx: usize) -> WorldState {
        let g = self.config.grid_size;
        let n = self.config.n_entities();
        let placements = self.cells.pow(n as u32);
        let bits = idx / placements;
        idx %= placements;
        let positions = (0..n)
            .map(|_| {
                let c = idx % self.cells;
                idx /= self.cells;
                Pos::new((c % g) as i32, (c / g) as i32)
            })
            .collect();
        let mut state = WorldState::from_positions(&self.config, positions);
        for (k, p) in state.prey_range(&self.config).enumerate() {
            state.alive[p] = bits & (1 << k) != 0;
        }
        state
    }
}

fn decode_digits(mut code: usize, base: usize, out: &mut [usize]) {
    for d in out.iter_mut() {
        *d = code % base;
        code /= base;
    }
}

/// Optimal expected return from the reset distribution.
pub fn oracle_value(config: &EnvConfig) -> Result<f64> {
    Ok(Oracle::solve(config, OraclePolicy::Optimal)?.expected_initial_value())
}

/// Expected return of the uniformly random joint policy from the reset
/// distribution.
pub fn random_policy_value(config: &EnvConfig) -> Result<f64> {
    Ok(Oracle::solve(config, OraclePolicy::UniformRandom)?.expected_initial_value())
}
