//! Discrete affine (bang-bang) optimal control of semilinear elliptic
//! equations with Robin boundary conditions, together with the tools used to
//! measure Hölder subregularity, Tikhonov rates and the level-set structure of
//! the switching function.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod optimize;
pub mod perturb;
pub mod problem;
pub mod solvers;

pub use error::{Error, Result};
pub use grid::{GridSpec, NormKind, ScalarField};
pub use problem::{ControlField, Preset, PresetParams, ProblemSpec};
pub use solvers::OptimalitySnapshot;
