//! Graph-convolutional forecaster with a learned adjacency and node-specific
//! weights drawn from a shared pool.
//!
//! Each layer computes `Z = (I + Â)·X·Θ + b`, where
//!
//! * `Â = softmax(relu(E^A·E^Aᵀ))` is built from the adjacency embeddings
//!   and used directly as the normalized propagation matrix;
//! * `Θ[i] = Σ_k E^G[i,k]·W[k]` and `b[i] = E^G[i]·b_pool` give every node
//!   its own affine map, factorized through the pool embeddings.
//!
//! Layers are stacked with `relu` in between. The adjacency and both
//! embedding matrices are shared by all layers; each layer owns its pools.

pub mod codec;
mod forward;
mod params;

pub use forward::{
    forward_on_tape, gcn_layer, gcn_layer_on_tape, ldigc_adjacency, ldigc_adjacency_on_tape,
    model_forward, nomor_bias, nomor_bias_on_tape, nomor_theta, nomor_theta_on_tape,
    AdaptiveAdjacency, ParamVars,
};
pub use params::{Architecture, ModelKind, ModelParams};
