use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moves::MoveKind;

/// Network dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Learned part of the per-node embedding.
    pub d_u: usize,
    /// Learned part of the per-location embedding.
    pub d_v: usize,
    /// Width of the pooled solution summary `z`.
    pub d_z: usize,
    /// Edge / move-kind embedding width.
    pub d_e: usize,
    /// Random-walk encoding width appended to node embeddings.
    pub d_pos: usize,
    /// Cyclic route-position encoding width appended to location embeddings.
    pub d_pe: usize,
    pub layers: usize,
    pub ggcn_hidden: usize,
    pub tf_heads: usize,
    pub tf_hidden: usize,
    pub jump_heads: usize,
    pub e2e_heads: usize,
    pub ffn_hidden: usize,
}

impl ModelConfig {
    /// Dimensions of the full-size model.
    pub fn full() -> Self {
        Self {
            d_u: 64,
            d_v: 64,
            d_z: 128,
            d_e: 16,
            d_pos: 8,
            d_pe: 16,
            layers: 3,
            ggcn_hidden: 128,
            tf_heads: 16,
            tf_hidden: 256,
            jump_heads: 4,
            e2e_heads: 4,
            ffn_hidden: 256,
        }
    }

    /// Small dimensions that train in seconds on one core.
    pub fn desk() -> Self {
        Self {
            d_u: 12,
            d_v: 12,
            d_z: 16,
            d_e: 4,
            d_pos: 4,
            d_pe: 4,
            layers: 2,
            ggcn_hidden: 16,
            tf_heads: 2,
            tf_hidden: 16,
            jump_heads: 2,
            e2e_heads: 2,
            ffn_hidden: 16,
        }
    }

    /// Node embedding width.
    pub fn du(&self) -> usize {
        self.d_u + self.d_pos
    }

    /// Location embedding width.
    pub fn dv(&self) -> usize {
        self.d_v + self.d_pe
    }

    /// Rows of the move-kind table: every kind plus the jump edge.
    pub fn edge_slots(&self) -> usize {
        MoveKind::COUNT + 1
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_u", self.d_u),
            ("d_v", self.d_v),
            ("d_z", self.d_z),
            ("d_e", self.d_e),
            ("d_pos", self.d_pos),
            ("d_pe", self.d_pe),
            ("layers", self.layers),
            ("ggcn_hidden", self.ggcn_hidden),
            ("tf_heads", self.tf_heads),
            ("tf_hidden", self.tf_hidden),
            ("jump_heads", self.jump_heads),
            ("e2e_heads", self.e2e_heads),
            ("ffn_hidden", self.ffn_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|d| d.1 == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        for (name, heads) in [("tf_heads", self.tf_heads), ("jump_heads", self.jump_heads), ("e2e_heads", self.e2e_heads)] {
            if self.tf_hidden % heads != 0 {
                return Err(Error::Config(format!("tf_hidden {} not divisible by {name} {heads}", self.tf_hidden)));
            }
        }
        if self.d_pe % 2 != 0 {
            return Err(Error::Config(format!("d_pe {} must be even", self.d_pe)));
        }
        if self.ggcn_hidden != self.d_z {
            return Err(Error::Config(format!(
                "ggcn_hidden {} must equal d_z {}: the node update adds the pooled hidden rows to z",
                self.ggcn_hidden, self.d_z
            )));
        }
        Ok(())
    }
}
