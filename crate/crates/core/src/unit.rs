use serde::{Deserialize, Serialize};

use crate::genome::Genome;
use crate::neural::NetState;

pub type UnitId = u64;

/// A live organism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: UnitId,
    /// Row-major lattice cell.
    pub cell: usize,
    pub energy: f64,
    pub genome: Genome,
    pub state: NetState,
    pub born: u64,
    pub parent: Option<UnitId>,
    /// Active hidden nodes after the last cycle.
    pub last_v_repr: u32,
    /// Computational cost of the last cycle, charged at the next evaluation.
    pub last_k: f64,
}

impl Unit {
    /// Fresh organism: resting network, nothing computed yet.
    pub fn new(id: UnitId, cell: usize, energy: f64, genome: Genome, born: u64, parent: Option<UnitId>) -> Self {
        let state = NetState::zeroed(&genome);
        Self { id, cell, energy, genome, state, born, parent, last_v_repr: 0, last_k: 0.0 }
    }

    pub fn age(&self, tick: u64) -> u64 {
        tick.saturating_sub(self.born)
    }
}
