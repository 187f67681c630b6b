//! Numerical laboratory for a compressible heat-conducting fluid coupled to a
//! structurally damped clamped plate (2D fluid, 1D beam).

pub mod chgvar;
pub mod cli_io;
pub mod error;
pub mod fixed_point;
pub mod fs_operator;
pub mod grid;
pub mod linear;
pub mod mat2;
pub mod sources;
pub mod sparse;

pub use error::{Error, Result};
