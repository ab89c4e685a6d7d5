use std::hash::{DefaultHasher, Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{EnvConfig, Task};
use super::observation::{observe_all, ObservationFrame};
use crate::error::{ensure, Result};

/// Integer grid cell; `x` grows to the right, `y` grows upward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Pos { x, y }
    }

    pub fn chebyshev(self, other: Pos) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn manhattan(self, other: Pos) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn euclidean(self, other: Pos) -> f64 {
        let dx = f64::from(self.x - other.x);
        let dy = f64::from(self.y - other.y);
        (dx * dx + dy * dy).sqrt()
    }

    fn moved(self, action: Action, grid: i32) -> Pos {
        let (dx, dy) = action.delta();
        Pos {
            x: (self.x + dx).clamp(0, grid - 1),
            y: (self.y + dy).clamp(0, grid - 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Agent,
    Prey,
    Landmark,
}

impl EntityKind {
    pub fn one_hot_index(self) -> usize {
        match self {
            EntityKind::Agent => 0,
            EntityKind::Prey => 1,
            EntityKind::Landmark => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Stay,
    Up,
    Down,
    Left,
    Right,
    Tag,
}

impl Action {
    pub const MOVES: [Action; 5] = [Action::Stay, Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Option<Action> {
        [Action::Stay, Action::Up, Action::Down, Action::Left, Action::Right, Action::Tag]
            .get(i)
            .copied()
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Action::Stay | Action::Tag => (0, 0),
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }
}

/// Full environment state. Entities are ordered agents, prey, landmarks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub positions: Vec<Pos>,
    pub kinds: Vec<EntityKind>,
    pub alive: Vec<bool>,
    pub step: usize,
}

impl WorldState {
    /// Entities placed uniformly and independently over the grid.
    pub fn random<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Self {
        let g = config.grid_size as i32;
        let positions = (0..config.n_entities())
            .map(|_| Pos::new(rng.random_range(0..g), rng.random_range(0..g)))
            .collect();
        WorldState::from_positions(config, positions)
    }

    pub fn from_positions(config: &EnvConfig, positions: Vec<Pos>) -> Self {
        let kinds = kinds_for(config);
        assert_eq!(positions.len(), kinds.len(), "one position per entity");
        WorldState {
            alive: vec![true; positions.len()],
            positions,
            kinds,
            step: 0,
        }
    }

    pub fn prey_range(&self, config: &EnvConfig) -> std::ops::Range<usize> {
        config.n_agents..config.n_agents + config.n_prey
    }

    pub fn prey_alive(&self, config: &EnvConfig) -> usize {
        self.prey_range(config).filter(|&p| self.alive[p]).count()
    }

    /// Stable digest for episode logs.
    pub fn state_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }

    /// Absolute positions normalized by the grid size, plus an alive flag,
    /// for every entity. This is the mixer's global state.
    pub fn features(&self, config: &EnvConfig) -> Vec<f32> {
        let g = config.grid_size as f32;
        self.positions
            .iter()
            .zip(&self.alive)
            .flat_map(|(p, &a)| [p.x as f32 / g, p.y as f32 / g, if a { 1.0 } else { 0.0 }])
            .collect()
    }

    pub fn check_bounds(&self, config: &EnvConfig) -> bool {
        let g = config.grid_size as i32;
        self.positions.iter().all(|p| (0..g).contains(&p.x) && (0..g).contains(&p.y))
    }
}

pub fn state_dim(config: &EnvConfig) -> usize {
    3 * config.n_entities()
}

fn kinds_for(config: &EnvConfig) -> Vec<EntityKind> {
    std::iter::repeat_n(EntityKind::Agent, config.n_agents)
        .chain(std::iter::repeat_n(EntityKind::Prey, config.n_prey))
        .chain(std::iter::repeat_n(EntityKind::Landmark, config.n_landmarks))
        .collect()
}

/// Validates a joint action against the task's action set.
pub fn check_joint_action(config: &EnvConfig, actions: &[usize]) -> Result<()> {
    ensure!(
        actions.len() == config.n_agents,
        Contract,
        "joint action has {} entries for {} agents",
        actions.len(),
        config.n_agents
    );
    for (i, &a) in actions.iter().enumerate() {
        ensure!(a < config.n_actions(), Contract, "agent {i}: action {a} outside 0..{}", config.n_actions());
    }
    Ok(())
}

/// Agent phase of a transition: resolves tags on pre-move positions, then
/// moves agents. Returns the number of prey captured.
pub(crate) fn apply_agents(config: &EnvConfig, state: &mut WorldState, actions: &[usize]) -> usize {
    let mut captured = 0;
    if config.task == Task::PredatorPrey {
        for p in state.prey_range(config) {
            if !state.alive[p] {
                continue;
            }
            let taggers = (0..config.n_agents)
                .filter(|&i| actions[i] == 5 && state.positions[i].manhattan(state.positions[p]) <= 1)
                .count();
            if taggers >= config.capture_threshold {
                state.alive[p] = false;
                captured += 1;
            }
        }
    }
    let g = config.grid_size as i32;
    for (pos, &a) in state.positions.iter_mut().zip(actions) {
        *pos = pos.moved(Action::from_index(a).expect("checked action"), g);
    }
    captured
}

/// Prey phase: each surviving prey applies its move (stay/up/down/left/right).
pub(crate) fn apply_prey(config: &EnvConfig, state: &mut WorldState, prey_moves: &[Action]) {
    let g = config.grid_size as i32;
    for (p, &m) in state.prey_range(config).zip(prey_moves) {
        if state.alive[p] {
            state.positions[p] = state.positions[p].moved(m, g);
        }
    }
}

pub(crate) fn reward_and_terminal(config: &EnvConfig, state: &WorldState, captured: usize) -> (f64, bool) {
    let out_of_time = state.step >= config.horizon;
    match config.task {
        Task::PredatorPrey => (captured as f64, out_of_time || state.prey_alive(config) == 0),
        Task::Spread => {
            let landmarks = config.n_agents + config.n_prey..config.n_entities();
            let cost: f64 = landmarks
                .map(|l| {
                    (0..config.n_agents)
                        .map(|i| state.positions[i].euclidean(state.positions[l]))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
            (-0.1 * cost, out_of_time)
        }
    }
}

/// Deterministic transition given the prey's moves.
pub fn transition(config: &EnvConfig, state: &WorldState, actions: &[usize], prey_moves: &[Action]) -> Result<(WorldState, f64, bool)> {
    check_joint_action(config, actions)?;
    let mut next = state.clone();
    let captured = apply_agents(config, &mut next, actions);
    apply_prey(config, &mut next, prey_moves);
    next.step += 1;
    let (reward, terminal) = reward_and_terminal(config, &next, captured);
    Ok((next, reward, terminal))
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub reward: f64,
    pub observations: Vec<ObservationFrame>,
    pub terminal: bool,
}

/// One environment instance with its own seeded generator.
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    state: WorldState,
    rng: ChaCha8Rng,
    terminal: bool,
}

impl Env {
    pub fn new(config: EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = WorldState::random(&config, &mut rng);
        let terminal = config.horizon == 0;
        Ok(Env {
            config,
            state,
            rng,
            terminal,
        })
    }

    /// Starts from an explicit state, drawing prey moves from `seed`.
    pub fn from_state(config: EnvConfig, state: WorldState, seed: u64) -> Result<Self> {
        config.validate()?;
        ensure!(state.positions.len() == config.n_entities(), Contract, "state has wrong entity count");
        ensure!(state.check_bounds(&config), Contract, "state has out-of-bounds entities");
        let terminal = state.step >= config.horizon;
        Ok(Env {
            config,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            terminal,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn observations(&self) -> Vec<ObservationFrame> {
        observe_all(&self.config, &self.state)
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        ensure!(!self.terminal, Contract, "step called on a finished episode");
        let prey_moves: Vec<Action> = (0..self.config.n_prey)
            .map(|_| Action::MOVES[self.rng.random_range(0..Action::MOVES.len())])
            .collect();
        let (next, reward, terminal) = transition(&self.config, &self.state, actions, &prey_moves)?;
        self.state = next;
        self.terminal = terminal;
        Ok(StepOutcome {
            reward,
            observations: self.observations(),
            terminal,
        })
    }
}

/// Creates a seeded environment and returns it with the initial observations.
pub fn env_reset(config: &EnvConfig, seed: u64) -> Result<(Env, Vec<ObservationFrame>)> {
    let env = Env::new(config.clone(), seed)?;
    let obs = env.observations();
    Ok((env, obs))
}
