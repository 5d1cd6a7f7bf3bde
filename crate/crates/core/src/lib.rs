//! Adaptive Crouzeix-Raviart finite elements for the first Dirichlet
//! eigenpair of the p-Laplacian on polygonal domains in 2-D.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); the aliases below fix it to `f64`, with `*32`
//! variants for single precision.

pub mod adapt;
pub mod assembly;
pub mod cholesky;
pub mod crspace;
pub mod eigen;
pub mod error;
pub mod mesh;
pub mod plap;
pub mod quadrature;
pub mod real;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
pub use real::Real;

pub type Mesh = mesh::TriangleMesh<f64>;
pub type CrFunction = crspace::CrFunction<f64>;
pub type Eigenpair = eigen::DiscreteEigenpair<f64>;
pub type AdaptiveConfig = adapt::AdaptiveConfig<f64>;
pub type AdaptiveTrace = adapt::AdaptiveTrace<f64>;
pub type IissConfig = eigen::IissConfig<f64>;
pub type DcConfig = plap::DcConfig<f64>;
pub type SparseSymMatrix = sparse::SparseSymMatrix<f64>;

pub type Mesh32 = mesh::TriangleMesh<f32>;
pub type CrFunction32 = crspace::CrFunction<f32>;
pub type Eigenpair32 = eigen::DiscreteEigenpair<f32>;
pub type AdaptiveConfig32 = adapt::AdaptiveConfig<f32>;
