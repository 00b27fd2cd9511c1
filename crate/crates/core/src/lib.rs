//! Elastic distances between convex planar loops through unbalanced optimal
//! transport of their length measures on the circle.
//!
//! * [`measures`]: measures on the circle, the cost `ℓ`, CDFs and quantiles.
//! * [`geometry`]: convex loops, length measures, Gauss-map lifts.
//! * [`wfr`]: the Wasserstein–Fisher–Rao distance via logarithmic entropy transport.
//! * [`circular_ot`]: one-dimensional transport on the circle and reparametrizations.
//! * [`srvt`]: the square root velocity distance and its equivalence with WFR.
//! * [`ballopt`]: linear maximization over WFR balls and sparse extremal solutions.

pub mod ballopt;
pub mod circular_ot;
pub mod error;
pub mod lift;
pub mod geometry;
pub mod measures;
pub mod srvt;
pub mod wfr;

pub use error::{Error, Result};

/// Library version embedded in every serialized output.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
