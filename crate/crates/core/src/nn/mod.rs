//! Small dense neural-network toolkit: autodiff tape, layers, optimizer,
//! gradient checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use checkpoint::{load_checkpoint, restore_into, save_checkpoint, CheckpointHeader};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport};
pub use graph::{Graph, Mat, Var};
pub use layers::{sinusoidal_positions, Conv1d, ConvPredictor, Ctx, FftBlock, LayerNorm, Linear};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Gradients, ParamId, ParamStore};
