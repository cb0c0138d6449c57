//! Distributed, localized robust controller synthesis.
//!
//! The crate optimizes directly over finite-impulse-response closed-loop maps
//! (the system level parametrization) and alternates between a convex step over
//! the closed loop and a convex step over a diagonal scaling, certifying robust
//! stability against diagonal time-varying uncertainty with L1, L-infinity, or
//! nu (max-element) criteria.
//!
//! Module map:
//!
//! * [`model`]: plants, interconnection graphs, d-hop supports, FIR transfer matrices.
//! * [`norms`]: induced norms, the magnitude matrix and diagonal scalings.
//! * [`sls`]: achievability, controller realization and closed-loop simulation.
//! * [`subsolver`]: the small dense convex solver used by both steps.
//! * [`phistep`]: the closed-loop step, column-separable or row/column ADMM.
//! * [`dstep`]: minimizing, consensus, randomizing and iterative scaling steps.
//! * [`dphi`]: the two outer iterations and the tradeoff sweep.
//! * [`baseline`]: discrete-time LQR used to normalize cost and margin.
//! * [`harness`]: experiment configuration, file formats and CLI commands.

pub mod baseline;
pub mod dphi;
pub mod dstep;
mod error;
pub mod harness;
pub mod model;
pub mod norms;
pub mod phistep;
pub mod sls;
pub mod subsolver;

pub use error::{Error, Result};
