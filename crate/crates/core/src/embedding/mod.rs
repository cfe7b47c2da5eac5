//! Multi-stream embedding network: unshared CNN streams over the whole image
//! and the two part crops, concatenated and projected by a fusion layer.

mod arch;
mod checkpoint;
mod model;
mod ops;
mod params;

pub use arch::{ConvSpec, ModelArch, StreamArch, StreamRole, DESK_CHANNELS};
pub use checkpoint::{arch_hash, load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{
    backward_pmsm, forward_pmsm, forward_pmsm_cached, forward_stream, interleaved_triplets, loss_and_gradients,
    ForwardCache, LossAndGrads, StreamCache, Views,
};
pub use params::{PmsmParams, StreamParams, Tensor};
