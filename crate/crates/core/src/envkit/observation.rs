//! Sight-limited observation function.
//!
//! A frame holds the observer's own absolute cell and one slot per entity in
//! fixed entity order. Positions are kept as integers so that re-centering a
//! frame on another agent is exact; [`ObservationFrame::write_features`]
//! produces the normalized real-valued network input.

use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use super::world::{EntityKind, WorldState};
use crate::diffcore::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySlot {
    pub visible: bool,
    /// Entity cell minus observer cell. Zero when not visible.
    pub rel: [i32; 2],
    /// `None` when not visible.
    pub kind: Option<EntityKind>,
}

impl EntitySlot {
    pub const HIDDEN: EntitySlot = EntitySlot {
        visible: false,
        rel: [0, 0],
        kind: None,
    };

    pub fn seen(rel: [i32; 2], kind: EntityKind) -> Self {
        EntitySlot {
            visible: true,
            rel,
            kind: Some(kind),
        }
    }

    pub fn chebyshev(&self) -> i32 {
        self.rel[0].abs().max(self.rel[1].abs())
    }
}

/// Values per entity slot: visible flag, relative x/y, kind one-hot.
pub const SLOT_FEATURES: usize = 6;
/// Values for the observer's own absolute position.
pub const SELF_FEATURES: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservationFrame {
    /// Observer's absolute cell; `None` for the all-zero unseen frame.
    pub position: Option<[i32; 2]>,
    pub slots: Vec<EntitySlot>,
}

impl ObservationFrame {
    /// The designated all-zero frame.
    pub fn unseen(n_entities: usize) -> Self {
        ObservationFrame {
            position: None,
            slots: vec![EntitySlot::HIDDEN; n_entities],
        }
    }

    pub fn is_unseen(&self) -> bool {
        self.position.is_none() && self.slots.iter().all(|s| !s.visible)
    }

    pub fn visible_count(&self) -> usize {
        self.slots.iter().filter(|s| s.visible).count()
    }

    pub fn feature_dim(n_entities: usize) -> usize {
        SELF_FEATURES + SLOT_FEATURES * n_entities
    }

    /// Writes the normalized features into `out` (length [`Self::feature_dim`]).
    pub fn write_features<T: Real>(&self, grid_size: usize, out: &mut [T]) {
        debug_assert_eq!(out.len(), Self::feature_dim(self.slots.len()));
        let scale = T::one() / T::from_usize(grid_size).expect("grid size");
        let f = |v: i32| T::from_i32(v).expect("small int") * scale;
        out.fill(T::zero());
        if let Some([x, y]) = self.position {
            out[0] = f(x);
            out[1] = f(y);
        }
        for (k, slot) in self.slots.iter().enumerate() {
            if !slot.visible {
                continue;
            }
            let base = SELF_FEATURES + k * SLOT_FEATURES;
            out[base] = T::one();
            out[base + 1] = f(slot.rel[0]);
            out[base + 2] = f(slot.rel[1]);
            if let Some(kind) = slot.kind {
                out[base + 3 + kind.one_hot_index()] = T::one();
            }
        }
    }

    pub fn features<T: Real>(&self, grid_size: usize) -> Vec<T> {
        let mut out = vec![T::zero(); Self::feature_dim(self.slots.len())];
        self.write_features(grid_size, &mut out);
        out
    }
}

/// Observation of `agent` in `state`: an entity is visible iff it is alive and
/// within Chebyshev distance `sight_radius`.
pub fn observe(config: &EnvConfig, state: &WorldState, agent: usize) -> ObservationFrame {
    let me = state.positions[agent];
    let r = config.sight_radius as i32;
    let slots = state
        .positions
        .iter()
        .zip(&state.kinds)
        .zip(&state.alive)
        .map(|((&p, &kind), &alive)| {
            if alive && me.chebyshev(p) <= r {
                EntitySlot::seen([p.x - me.x, p.y - me.y], kind)
            } else {
                EntitySlot::HIDDEN
            }
        })
        .collect();
    ObservationFrame {
        position: Some([me.x, me.y]),
        slots,
    }
}

pub fn observe_all(config: &EnvConfig, state: &WorldState) -> Vec<ObservationFrame> {
    (0..config.n_agents).map(|i| observe(config, state, i)).collect()
}

/// Shape information needed to interpret frames without the full config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObsLayout {
    pub grid_size: usize,
    pub sight_radius: usize,
    pub n_agents: usize,
    pub n_entities: usize,
}

impl ObsLayout {
    pub fn new(config: &EnvConfig) -> Self {
        ObsLayout {
            grid_size: config.grid_size,
            sight_radius: config.sight_radius,
            n_agents: config.n_agents,
            n_entities: config.n_entities(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        ObservationFrame::feature_dim(self.n_entities)
    }
}
