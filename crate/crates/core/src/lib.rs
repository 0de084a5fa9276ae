//! Graph-convolutional collaborative filtering without feature transforms or
//! nonlinearities.
//!
//! Embeddings of users and items live in one `(M + N) x T` table. Each
//! propagation layer multiplies the table by a normalized bipartite adjacency
//! matrix, and the final representation is a weighted sum of all layers. The
//! only trainable parameters are the layer-0 embeddings, optimized with a
//! pairwise BPR objective and Adam.
//!
//! The crate is `no_std` (it needs `alloc`). Enable the `parallel` feature to
//! spread sparse products and evaluation across a rayon pool; results are
//! bit-identical to the serial path.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod analysis;
pub mod dataset;
pub mod dense;
mod error;
pub mod evaluation;
pub mod graph;
mod math;
pub mod model;
pub mod synthetic;
pub mod training;

pub use dataset::{IdMap, InteractionDataset, RawInteractions, SplitSummary};
pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use evaluation::{EvalReport, EvalSplit};
pub use graph::{GraphOperator, NormScheme, SparseAdjacency};
pub use model::{AlphaMode, EmbeddingState, LayerWeights};
pub use training::{AdamState, BprTriplet, FitResult, Objective, TrainConfig};
