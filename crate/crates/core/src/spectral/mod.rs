//! Fields on the 2π-periodic 3-torus: grids, FFTs, spectral calculus and
//! Sobolev norms.

mod fft;
mod field;
mod grid;
pub mod snapshot;

pub use field::{CVec3, PhysicalField, SpectralField, TensorField};
pub use grid::{
    minimum_image, torus_norm, wrap_coordinate, wrap_point, GridSpec, DOMAIN_LENGTH,
    TORUS_VOLUME,
};
