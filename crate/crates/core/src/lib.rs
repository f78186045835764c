//! Tsallis-regularized optimal transport.
//!
//! The crate is organised bottom-up:
//!
//! * [`qmath`] holds the q-deformed logarithm/exponential and the Tsallis
//!   entropy and relative entropy.
//! * [`transport`] defines problems, plans, Gibbs kernels, objectives and the
//!   dual recovery used as a KKT certificate.
//! * [`solvers`] has the exact LP (q = 0), Sinkhorn-Knopp (q = 1), the
//!   second-order scaling solver (0 < q < 1) and the mirror-descent solver
//!   (q > 1), behind a single [`solvers::solve`] dispatcher.
//! * [`lab`] checks metric properties of the regularized distances.
//! * [`eco`] is the ecological-inference pipeline built on top of the solvers.
//!
//! ```
//! use trot::transport::{QParams, TransportProblem};
//! use trot::solvers::{solve, SolverConfig};
//!
//! let prob = TransportProblem::new(
//!     vec![0.5, 0.5],
//!     vec![0.3, 0.7],
//!     vec![vec![0.0, 1.0], vec![1.0, 0.0]],
//! )
//! .unwrap();
//! let params = QParams::new(0.5, 5.0).unwrap();
//! let sol = solve(&prob, &params, &SolverConfig::default()).unwrap();
//! assert!(sol.trace.converged);
//! assert!(sol.plan.row_residual < 1e-6);
//! ```

pub mod cli;
pub mod eco;
pub mod error;
pub mod lab;
pub mod qmath;
pub mod solvers;
pub mod transport;

pub use error::{Error, Result};
