//! Joint uplink/downlink sub-carrier and power allocation for OFDMA
//! edge-computing users with finite-blocklength reliability targets.
//!
//! The allocation problem is a mixed-integer program. Products of
//! indicators and powers are linearized with Big-M envelopes, the integrality
//! constraint is moved into the objective as a difference-of-convex penalty,
//! and the remaining problem is solved by successive convex approximation in
//! which every iterate is a convex program handled by a primal-dual interior
//! point method. Benchmark schemes, an exhaustive reference for small
//! instances and a Monte Carlo sweep harness sit on top.

pub mod benchmarks;
pub mod error;
pub mod fbtrate;
pub mod init;
pub mod problem;
pub mod scasolver;
pub mod subproblem;
pub mod sweep;
pub mod sysmodel;
pub mod transform;

pub use error::{Error, Result};
pub use sysmodel::{ChannelRealization, Link, SystemConfig};
pub use benchmarks::{SchemeId, SchemeRun};
pub use problem::{Allocation, Assignment, ConstraintId, FeasibilityReport, Tensor3};
pub use scasolver::{IterationTrace, RateModel, ScaConfig};
pub use sweep::{RunResult, SweepAxis, SweepSpec, SweepTable};
