//! Model description, plaintext reference engine and secure layers.

mod arch;
mod model;
mod reference;
mod secure;

pub use arch::{Architecture, BlockSpec, LayerSpec, PlacedLayer, Readout};
pub use model::{fold_batch_norm, LayerParams, ModelShare, PlaintextModel, SharedLayer};
pub use reference::{aggregate, plaintext_forward, sigmoid, Dense};
pub use secure::{
    batch_norm_layer, layer_cost, linear_layer, relu_layer, sigmoid_approx, sigmoid_layer, Runtime, SIGMOID_CLAMP,
    SIGMOID_COEFFS,
};
