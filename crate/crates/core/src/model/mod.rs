//! The spatio-temporal graph convolutional network: configuration, scaled
//! graph Laplacian, hand-differentiated layers, the assembled model with
//! hidden-feature taps, pruning masks, FLOP estimates and checkpoints.

mod checkpoint;
mod config;
mod flops;
mod laplacian;
pub mod layers;
mod mask;
mod stgcn;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use flops::{count_flops, flops_for_batch, REFERENCE_PROFILE_BATCH};
pub use laplacian::{scaled_laplacian, ScaledLaplacian, DEGREE_FLOOR};
pub use mask::MaskSet;
pub use stgcn::{
    build_model, FeatureTaps, ForwardCache, ModelGrads, StGcn, TapGrads, HIDDEN_WEIGHT_NAMES,
};
