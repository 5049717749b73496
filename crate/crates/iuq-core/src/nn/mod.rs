//! Neural network stack: layers, model architectures, checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::{Grads, ParamGroup, ParamMeta};
pub use model::{build_model, Arch, Cache, ClampRange, Mode, Model, ModelOutputs, ModelSpec, OutputGrads};
