//! Federated Lasso over row-partitioned data.
//!
//! Institutions hold private row blocks `(A_i, y_i)` of a shared design
//! matrix. A center solves
//!
//! ```text
//! min_x  1/2 ||A x - y||^2 + lambda ||x||_1
//! ```
//!
//! by querying only per-institution partial sums (gradients, correlations,
//! norms) and adding them in a fixed order, so every distributed quantity can
//! be recomputed exactly by [`CentralProblem`]. Along a regularization path,
//! distributed safe screening (D-SAFE, D-EDPP) discards features that are
//! provably zero before each solve.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod central;
pub mod data;
pub mod error;
pub mod kernel;
pub mod pipeline;
pub mod protocol;
pub mod screening;
pub mod solver;

pub use central::CentralProblem;
pub use error::{Error, ErrorCategory, Result};
pub use kernel::{FeatureShard, ResponseShard, SparseVector};
pub use protocol::{Federation, FederationConfig, Institution, SimTransport, SocketTransport};
pub use screening::{DiscardMask, RuleOrigin};
pub use solver::{SolveResult, SolverConfig};
