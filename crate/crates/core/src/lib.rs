//! Spherical Transformer: sampling grids on the sphere, their rotation
//! symmetries, and a transformer that treats patches of grid points as tokens.
//!
//! Geometry is computed in `f64`. The tensor engine, the network and the
//! equivariance harness are generic over [`Real`]; the aliases below fix the
//! common precisions.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod equivariance;
pub mod error;
pub mod geometry;
pub mod groups;
pub mod model;
pub mod real;
pub mod rng;
pub mod sampling;
pub mod uniformity;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use geometry::{Mat3, UnitVector3, Vec3};
pub use groups::{enumerate_group, group_permutations, rotation_to_permutation, RotationGroup, Solid};
pub use real::{Precision, Real};
pub use sampling::{GridParams, SamplingGrid, SamplingMethod};

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Graph32<'a> = autodiff::Graph<'a, f32>;
pub type Graph64<'a> = autodiff::Graph<'a, f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
