//! Partial search graph: the record of solutions visited during one search.
//!
//! A pool holds one sample per basin explored; a new sample starts after
//! every jump. Each sample keeps at most [`SAMPLE_CAP`] nodes, dropping the
//! oldest first.

mod features;
mod labels;
mod sample;

use serde::{Deserialize, Serialize};

pub use features::{local_features, random_walk_pe, route_angles, GLOBAL_FEATURES, LOCAL_FEATURES};
pub use labels::{label_subgraph, sample_training_subgraphs, LabelOutcome, TaggedChain};
pub use sample::{NodeId, PsgNode, PsgPool, PsgSample, SubgraphBatch, JumpEdge, TraceNode};

use crate::moves::MoveKind;

/// Retained nodes per sample.
pub const SAMPLE_CAP: usize = 64;

/// Default width of the random-walk positional encoding.
pub const DEFAULT_PE_STEPS: usize = 8;

/// How a node was reached from its parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Move(MoveKind),
    Jump,
}

impl EdgeKind {
    /// Slot in the edge-embedding table; jumps take the slot after the moves.
    pub fn index(self) -> usize {
        match self {
            EdgeKind::Move(k) => k.index(),
            EdgeKind::Jump => MoveKind::COUNT,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        if i == MoveKind::COUNT {
            Some(EdgeKind::Jump)
        } else {
            MoveKind::from_index(i).map(EdgeKind::Move)
        }
    }
}

impl std::fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EdgeKind::Move(k) => write!(f, "move:{k}"),
            EdgeKind::Jump => f.write_str("jump"),
        }
    }
}
