//! Graph-transformer encoder over AP–UE pair nodes.

pub mod ckpt;
pub mod graph;
pub mod model;
pub mod tape;

pub use graph::{build_graph, DesignState, InteractionGraph};
pub use model::{Encoded, Gtn, GtnConfig, ParamStore};
pub use tape::{Gradients, Tape, Tensor, Var};
