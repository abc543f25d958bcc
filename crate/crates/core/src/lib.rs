//! Geometric-optics simulation and design search for cat's-eye
//! retroreflective markers.
//!
//! A marker is an array of identical retroreflecting units: a focusing
//! element (hemispherical lens, plano-convex lenslet or glass ball) in front
//! of a curved or flat mirror. [`designs`] turns the handful of parameters of
//! a unit into an ordered [`designs::SurfaceStack`], [`tracer`] pushes ray
//! bundles emitted by [`scene`] through it, [`metrics`] reduces the result
//! to the fraction of light that lands on the camera lens, and
//! [`optimizer`] runs the aperture/distance/aperture design sweep.
//!
//! Lengths are millimetres and angles degrees throughout the public API.

pub mod designs;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod optimizer;
pub mod sampling;
pub mod scene;
pub mod tracer;

pub use error::{Error, Result};
