//! Finite-width ReLU networks in NTK parameterization, their infinite-width
//! tangent kernels, and the dynamics of gradient descent under cross-entropy
//! loss.
//!
//! * [`linalg`]: dense matrices, a Jacobi symmetric eigensolver, Cholesky.
//! * [`rng`]: reproducible ChaCha20 streams with Box–Muller normals.
//! * [`kernels`]: arc-cosine functions and analytic kernels.
//! * [`network`]: fully connected and residual networks, backpropagation,
//!   and the empirical kernel.
//! * [`dynamics`]: losses, residuals, the Lyapunov function and training.
//! * [`certify`]: positive-definiteness certificates and deviation gaps.

pub mod certify;
pub mod dynamics;
mod error;
pub mod kernels;
pub mod linalg;
pub mod network;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
