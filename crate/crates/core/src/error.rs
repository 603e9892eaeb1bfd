use crate::geometry::Vec2;
use crate::model::Violation;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({}, {}) lies outside the closed unit disk", .0.x, .0.y)]
    OutsideDomain(Vec2),
    #[error("kernel evaluated at coincident points ({}, {})", .0.x, .0.y)]
    Singular(Vec2),
    #[error("vortices {i} and {j} are {distance:.3e} apart, below the collision guard {guard:.3e}")]
    CollisionImminent {
        i: usize,
        j: usize,
        distance: f64,
        guard: f64,
    },
    #[error("initial data violates {} assumption(s): {}", .0.len(), summarize(.0))]
    InvalidSpec(Vec<Violation>),
    #[error("grid does not cover particle bounding box with a margin of {margin_cells} cells")]
    GridTooSmall { margin_cells: usize },
    #[error("density has zero mass")]
    ZeroMass,
    #[error("patch label {0} has zero circulation")]
    ZeroCirculation(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("support of size {size} exceeds the exact solver limit {limit}; use the entropic solver")]
    SizeLimit { size: usize, limit: usize },
    #[error("total masses differ: {0:.6e} vs {1:.6e}")]
    MassMismatch(f64, f64),
    #[error("no convergence after {iterations} iterations (marginal residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("particle {index} left the unit disk (|x| = {radius:.6})")]
    Integrity { index: usize, radius: f64 },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("time step {dt:.3e} violates the transport limit {limit:.3e}")]
    StepTooLarge { dt: f64, limit: f64 },
}

fn summarize(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
