//! Fourier ptychographic microscopy toolkit.
//!
//! The crate simulates the multi-LED coherent imaging forward model,
//! reconstructs complex object fields with classical solvers (Wirtinger
//! flow, alternating projections) and with an unrolled gradient network,
//! and trains that network with a built-in reverse-mode tape.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod field;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod lwgnet;
pub mod metrics;
pub mod solvers;
pub mod synthgen;
pub mod train;

pub use error::{FpmError, Result};
pub use field::{ComplexField, RealImage};
pub use geometry::{KVector, PupilMask, SystemGeometry};
