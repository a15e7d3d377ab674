//! Agent networks on a small reverse-mode tape.
//!
//! The code is generic over [`Real`](crate::Real); `f64` is the default
//! instantiation used for training and gradient checks.

pub mod config;
pub mod gradcheck;
pub mod input;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;

pub use config::ModelConfig;
pub use input::{cyclic_positional_embedding, normalize_global, ModelInput};
pub use model::{read_checkpoint, write_checkpoint, AgentModel, BackboneOut, Checkpoint, Head};
pub use optim::{Adam, AdamRecord, StepSchedule};
pub use params::{ParamId, ParamStore, TensorRecord};
pub use tape::{Gradients, Shape, Tape, Var};
