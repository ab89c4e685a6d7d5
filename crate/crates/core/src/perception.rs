//! Perception portraits: agent `i`'s reconstruction of what teammate `j`
//! observes, built only from `i`'s own frame.
//!
//! The transform re-centers every entity `i` can see on `j`
//! (`r_j→e = r_i→e − r_i→j`), then keeps only the entities that also fall
//! inside `j`'s sight radius, so the portrait covers exactly the intersection
//! of the two sight regions. `j`'s own absolute cell is recovered from `i`'s
//! cell plus `r_i→j`. When `i` cannot see `j` the portrait is the all-zero
//! unseen frame. Integer positions make the reconstruction exact: every
//! visible slot of portrait `(i, j)` equals the corresponding slot of `j`'s
//! true observation.

use ndarray::Array2;
use rand::Rng;

use crate::diffcore::{Binding, Graph, GruCell, ParamSet, Real, Var};
use crate::envkit::{EntitySlot, ObsLayout, ObservationFrame};
use crate::error::{ensure, Result};

/// A portrait frame together with its intersection mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionPortrait {
    pub observer: usize,
    pub subject: usize,
    pub frame: ObservationFrame,
    /// Per-slot flag: the entity lies in both sight regions.
    pub intersection: Vec<bool>,
}

impl PerceptionPortrait {
    pub fn build(layout: &ObsLayout, o_i: &ObservationFrame, i: usize, j: usize) -> Result<Self> {
        let frame = viewpoint_transform(layout, o_i, i, j)?;
        let intersection = frame.slots.iter().map(|s| s.visible).collect();
        Ok(PerceptionPortrait {
            observer: i,
            subject: j,
            frame,
            intersection,
        })
    }
}

/// Re-centers `o_i` on teammate `j`.
pub fn viewpoint_transform(layout: &ObsLayout, o_i: &ObservationFrame, i: usize, j: usize) -> Result<ObservationFrame> {
    ensure!(i < layout.n_agents && j < layout.n_agents, Contract, "agent ids ({i}, {j}) outside 0..{}", layout.n_agents);
    ensure!(
        o_i.slots.len() == layout.n_entities,
        Contract,
        "frame has {} slots, layout expects {}",
        o_i.slots.len(),
        layout.n_entities
    );
    if i == j {
        return Ok(o_i.clone());
    }
    let (Some([px, py]), true) = (o_i.position, o_i.slots[j].visible) else {
        return Ok(ObservationFrame::unseen(layout.n_entities));
    };
    let [dx, dy] = o_i.slots[j].rel;
    let radius = layout.sight_radius as i32;
    let slots = o_i
        .slots
        .iter()
        .map(|s| {
            let rel = [s.rel[0] - dx, s.rel[1] - dy];
            match s.kind {
                Some(kind) if s.visible && rel[0].abs().max(rel[1].abs()) <= radius => EntitySlot::seen(rel, kind),
                _ => EntitySlot::HIDDEN,
            }
        })
        .collect();
    Ok(ObservationFrame {
        position: Some([px + dx, py + dy]),
        slots,
    })
}

/// Agent `i`'s portraits of every agent (itself included), from its own frame
/// only. This is all an agent computes during decentralized execution.
pub fn row_portraits(layout: &ObsLayout, o_i: &ObservationFrame, i: usize) -> Result<Vec<ObservationFrame>> {
    (0..layout.n_agents).map(|j| viewpoint_transform(layout, o_i, i, j)).collect()
}

/// The full `N×N` grid: row `i` holds agent `i`'s portraits of all `j`.
pub fn batch_portraits(layout: &ObsLayout, observations: &[ObservationFrame]) -> Result<Vec<Vec<ObservationFrame>>> {
    ensure!(
        observations.len() == layout.n_agents,
        Contract,
        "{} observations for {} agents",
        observations.len(),
        layout.n_agents
    );
    observations
        .iter()
        .enumerate()
        .map(|(i, o)| row_portraits(layout, o, i))
        .collect()
}

/// Recurrent encoder shared by every `(i, j)` portrait stream.
#[derive(Clone, Debug)]
pub struct PortraitEncoder {
    gru: GruCell,
    grid_size: usize,
}

impl PortraitEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(params: &mut ParamSet<T>, layout: &ObsLayout, hidden: usize, rng: &mut R) -> Self {
        PortraitEncoder {
            gru: GruCell::new(params, "perception.gru", layout.feature_dim(), hidden, rng),
            grid_size: layout.grid_size,
        }
    }

    pub fn gru(&self) -> &GruCell {
        &self.gru
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    /// Stacks frame features into an `m×feature_dim` constant.
    pub fn features<T: Real>(&self, frames: &[&ObservationFrame]) -> Array2<T> {
        let width = self.gru.input_dim();
        let mut data = Array2::zeros((frames.len(), width));
        for (mut row, f) in data.rows_mut().into_iter().zip(frames) {
            f.write_features(self.grid_size, row.as_slice_mut().expect("standard layout"));
        }
        data
    }

    /// One recurrent step for a batch of portrait streams.
    pub fn step<T: Real>(&self, g: &mut Graph<'_, T>, bind: &Binding, frames: &[&ObservationFrame], hidden: Var) -> Result<Var> {
        let x = g.constant(self.features(frames));
        self.gru.step(g, bind, x, hidden)
    }

    /// Encodes one portrait sequence; returns the hidden state after each
    /// frame. The hidden state starts at zero; an empty sequence yields no
    /// steps.
    pub fn encode<T: Real>(&self, params: &ParamSet<T>, frames: &[ObservationFrame]) -> Result<Vec<Vec<T>>> {
        let mut g = Graph::new();
        let bind = g.bind_frozen(params);
        let mut h = g.constant(Array2::zeros((1, self.hidden_dim())));
        let mut out = Vec::with_capacity(frames.len());
        for f in frames {
            h = self.step(&mut g, &bind, &[f], h)?;
            out.push(g.value(h).iter().copied().collect());
        }
        Ok(out)
    }
}
