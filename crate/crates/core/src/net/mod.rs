//! The per-shift predictor: a weight-shared (siamese) feature extractor over
//! the horizontal and the rotated vertical stack, followed by a U-Net that
//! emits a classification and a regression map. Forward and reverse passes
//! are implemented directly (im2col convolutions, batch normalization,
//! transposed-convolution upsampling) so gradients can be checked against
//! finite differences at f64 precision while training runs in f32.

mod checkpoint;
mod layers;
mod model;
mod ops;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointData};
pub use layers::{BnMode, GradStore, ParamKind, ParamMeta};
pub use model::{
    stack_channels, stack_channels_f32, triple_indices, NetConfig, NetInput, NetInputGrad,
    Network, NetworkBatchCache, NetworkCache,
};
pub use ops::Scalar;
