//! Distributed pose graph optimization by majorization minimization.
//!
//! The crate is organised bottom-up:
//!
//! * [`manifold`]: SO(d) projection, tangent projection and retraction.
//! * [`graph`]: multi-robot pose graphs and the stacked pose layout.
//! * [`quadratic`]: the objective, its data matrix and the separable majorant.
//! * [`local_solver`]: per-robot surrogate minimization on the manifold.
//! * [`solvers`]: MM and accelerated MM outer loops.
//! * [`chordal`]: accelerated distributed chordal initialization.
//! * [`runtime`]: a message-passing simulation with one thread per robot.
//! * [`io`]: g2o files, synthetic cube datasets, metrics and the benchmark driver.

pub mod chordal;
pub mod error;
pub mod graph;
pub mod io;
pub mod local_solver;
pub mod manifold;
pub mod par;
pub mod quadratic;
pub mod runtime;
pub mod solvers;
pub mod sparse;

pub use chordal::{chordal_initialization, ChordalConfig, ChordalResult};
pub use error::{PgoError, Result};
pub use graph::{Layout, Measurement, PartitionStrategy, PoseBlock, PoseEstimate, PoseGraph, PoseId};
pub use par::Execution;
pub use runtime::{run_distributed, DistributedParams, DistributedRun, RuntimeAlgorithm};
pub use solvers::{amm_pgo, mm_pgo, Algorithm, RunRecord, SolverConfig, SolverRun};
pub use sparse::Mat;
