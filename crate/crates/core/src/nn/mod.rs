//! Small neural-network engine: 64-bit tensors, a fixed layer vocabulary with
//! hand-written backward passes, Adam, and a binary weight format.

mod adam;
mod layer;
mod network;
mod tensor;
mod train;
mod weights;

pub use adam::{adam_step, AdamState};
pub use layer::{Conv2d, Dense, Layer, LayerSpec};
pub use network::{Cache, Gradients, Network};
pub use tensor::Tensor4;
pub use train::{fit, sample_sum_squared_error, FitConfig};
pub use weights::{from_bytes, load_weights, save_weights, to_bytes, FORMAT_VERSION, MAGIC};

/// The seeded generator used for weight init, shuffling and augmentation.
pub type Rng64 = rand_xoshiro::SplitMix64;
