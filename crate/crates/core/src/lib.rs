//! Learn-to-search agents for capacitated vehicle routing.
//!
//! The crate is organised bottom-up:
//!
//! * [`vrp`] instances, solutions, evaluation, the exact small-instance oracle
//! * [`moves`] the six neighbourhood moves with incremental deltas
//! * [`psg`] the partial search graph recorded during search
//! * [`nn`] a reverse-mode tape and the agent networks built on it
//! * [`train`] dataset generation, losses and the supervised loops
//! * [`search`] the agent-driven search loop, beam-search jumps and ALNS
//!
//! The network code is generic over the scalar type (see [`Real`]); the
//! routing side works in `f64` throughout. Aliases for the `f64`
//! instantiation are exported at the crate root.

pub mod error;
pub mod moves;
pub mod nn;
pub mod psg;
pub mod scalar;
pub mod search;
pub mod train;
pub mod vrp;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` reverse-mode tape.
pub type Tape = nn::tape::Tape<f64>;
/// `f64` parameter store.
pub type ParamStore = nn::params::ParamStore<f64>;
/// `f64` agent network.
pub type AgentModel = nn::model::AgentModel<f64>;
/// `f64` model input.
pub type ModelInput = nn::input::ModelInput<f64>;
/// `f32` agent network, mostly useful for smaller checkpoints.
pub type AgentModelF32 = nn::model::AgentModel<f32>;
