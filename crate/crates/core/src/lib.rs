//! Neural omnidirectional distance fields (ODFs) for line-of-sight queries.
//!
//! A scene is partitioned into cells; each active cell gets a small network
//! mapping (position, direction) to the distance of the first surface along
//! that ray. A visibility query `s -> t` then costs one network evaluation in
//! the cell containing `s`, independent of scene complexity.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod encoding;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod odf;
pub mod partition;
pub mod real;
pub mod sphere;
pub mod training;

pub use glam::DVec3;
