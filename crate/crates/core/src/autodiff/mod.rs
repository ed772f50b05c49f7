//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! The kernel is deliberately small: a [`Matrix`] value type, a tape-based
//! [`Graph`] whose nodes record the forward computation, a named
//! [`ParamStore`] with Adam updates, finite-difference checking utilities,
//! and a binary checkpoint format. Everything downstream (base module,
//! subspace module, losses) is expressed through this op set, so gradient
//! correctness is verified here once, numerically, and inherited everywhere.

mod checkpoint;
mod gradcheck;
mod graph;
mod matrix;
mod store;

pub use checkpoint::{load_records, read_records, save_records, write_records, CHECKPOINT_MAGIC};
pub use gradcheck::{check_gradients, max_rel_error, rel_error, GradCheckReport};
pub use graph::{stable_sigmoid, Graph, Reduction, Var};
pub use matrix::Matrix;
pub use store::{AdamConfig, ParamStore};
