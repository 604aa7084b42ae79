//! Table-tennis perception toolkit.
//!
//! - [`geometry`]: cameras, poses, projection, triangulation, rig files.
//! - [`physics`]: ball flight with drag, Magnus force and exponential spin decay.
//! - [`spin`]: dot-pattern spin estimation from ball images.
//! - [`calib`]: wand-based extrinsic calibration with bundle adjustment.
//! - [`events`]: contrast-threshold event simulation and spike-frame binning.
//! - [`snn`]: spiking ball detector with population-coded outputs.

pub mod geometry;
pub mod physics;
pub mod spin;
pub mod events;
pub mod calib;
pub mod snn;
