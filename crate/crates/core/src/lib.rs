//! Memory of motion for warm-starting trajectory optimization.
//!
//! The crate bundles a planar robot model ([`geometry`]), a penalty-method
//! trajectory optimizer ([`trajopt`]), three task-to-path regressors
//! ([`approx`]), PCA path compression ([`dimred`]) and the orchestration that
//! ties them together ([`memory`]): building a database of solved tasks,
//! ranking alternative goals by predicted path cost, and racing several warm
//! starts against each other.

pub mod approx;
pub mod container;
pub mod dimred;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod memory;
pub mod task;
pub mod trajopt;

pub use error::{Error, Result};
pub use geometry::{Configuration, Environment, Obstacle, Path, Waypoint};
pub use task::{Goal, Task, TaskFamily, TaskSpec};
pub use trajopt::{path_cost, CancelToken, Problem, SolveResult, SolverOptions, Terminal, Termination};
