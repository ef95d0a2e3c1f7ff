//! Layerwise probing of speech representations.
//!
//! Analysis side: per-layer feature dumps ([`featio`]), span pooling
//! ([`spanpool`]), projection-weighted CCA ([`cca`]), k-means discretization
//! ([`cluster`]) feeding plug-in mutual information ([`mi`]), spoken STS and
//! rank statistics ([`stats`]) and downstream layer-weight reports
//! ([`layerweights`]).
//!
//! Model side: [`testbed`] is a small multi-resolution masked-prediction
//! encoder with hand-written backprop, used to produce layer dumps for the
//! ablation family and to verify the analysis end to end.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the common instantiations.

pub mod cca;
pub mod cluster;
pub mod curve;
pub mod error;
pub mod featio;
pub mod layerweights;
pub mod mi;
pub mod scalar;
pub mod spanpool;
pub mod stats;
pub mod testbed;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Matrix32 = nalgebra::DMatrix<f32>;

pub type PooledSet64 = spanpool::PooledSet<f64>;
pub type PooledSet32 = spanpool::PooledSet<f32>;
pub type CcaResult64 = cca::CcaResult<f64>;
pub type CcaResult32 = cca::CcaResult<f32>;








pub type Clustering64 = cluster::Clustering<f64>;
pub type Clustering32 = cluster::Clustering<f32>;
pub type MiResult64 = mi::MiResult<f64>;
pub type LayerWeights64 = layerweights::LayerWeights<f64>;
/// Testbed in verification precision.
pub type Model64 = testbed::Model<f64>;
/// Testbed in speed precision.
pub type Model32 = testbed::Model<f32>;
