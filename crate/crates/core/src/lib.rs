pub mod certificate;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod euler;
pub mod geometry;
pub mod greens;
pub mod model;
pub mod pvs;
pub mod simulation;
pub mod special;
pub mod transport;

pub use error::{Error, Result};
pub use geometry::Vec2;
pub use model::{
    deposit, discretize, validate, Domain, GridParams, GriddedDensity, InitialDataSpec, ParticleField, Profile,
    VortexPatchSpec,
};
