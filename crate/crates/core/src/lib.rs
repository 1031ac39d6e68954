//! Supercritical divergence-free drifts and the numerical experiments built
//! on them: field construction, grid certificates for the accompanying
//! inequalities, a monotone parabolic solver and a Monte Carlo elliptic
//! solver.

pub mod cli;
pub mod drift;
pub mod elliptic;
pub mod dual;
pub mod error;
pub mod mixedcoord;
pub mod output;
pub mod parabolic;
pub mod quad;
pub mod subsolution;
pub mod verify;

pub use drift::{StreamFunction, StreamKind, VelocityRZ};
pub use error::{Error, Result};
pub use mixedcoord::{DriftParams, MixedPoint};
