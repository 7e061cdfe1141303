//! Minimal numeric layer: dense/CSR matrices, a reverse-mode tape, Adam, and
//! a finite-difference gradient checker. Everything is f64 and
//! single-threaded; summation order is fixed so identical inputs give
//! bit-identical outputs.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod sparse;
pub mod tape;

pub use adam::{AdamParams, AdamState};
pub use dense::DenseMatrix;
pub use gradcheck::{finite_diff_check, FdReport};
pub use sparse::SparseMatrix;
pub use tape::{softmax, BufId, Gradients, Tape};
