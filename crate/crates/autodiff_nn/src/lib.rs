//! Reverse-mode automatic differentiation on rank-2 tensors, with just
//! enough neural-network machinery for small dense models: MLP layers,
//! Adam, and a counter-based deterministic RNG.
//!
//! Design points:
//!
//! * [`tensor::Tensor`] is a plain `ndarray::Array2<f64>`; broadcasting
//!   follows standard rules (a `(1,n)` bias row or `(B,1)` column combines
//!   with a `(B,n)` batch).
//! * [`tape::Tape`] records operations eagerly; [`tape::Tape::backward`]
//!   walks the record once in reverse, summing adjoints over broadcast axes.
//! * Leaves created with `requires_grad = false` are **stop-gradient**
//!   boundaries: their values flow forward but no gradient is accumulated
//!   for them and nothing behind them is visited.
//! * [`rng::DetRng`] is a splitmix-style counter generator: every draw is a
//!   pure function of `(seed, purpose, counter)`, so independent consumers
//!   can derive decorrelated streams and replays are bit-identical.

pub mod adam;
pub mod nn;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{AdamError, AdamState};
pub use nn::{
    collect_mlp_grad, forward_mlp, forward_mlp_values, mlp_leaves, time_features, Activation,
    MlpNodes, MlpSpec, NnError, ParamStore, TimeEmbedding,
};
pub use rng::DetRng;
pub use tape::{CustomOp, Gradients, NodeId, Tape, TapeError};
pub use tensor::{all_finite, col, matrix, row, scalar, Tensor};
