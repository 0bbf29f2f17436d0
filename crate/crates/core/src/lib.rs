//! Finite-element Darcy/transport solvers coupled with a physics-informed
//! DeepONet surrogate for concentration fields driven by localized Gaussian
//! sources.

pub mod config;
pub mod deeponet;
pub mod element;
pub mod error;
pub mod export;
pub mod fem_darcy;
pub mod fem_transport;
pub mod mesh;
pub mod physics;
pub mod pipeline;
pub mod sampling;
pub mod sparse;

pub use error::{Error, Result};
pub use mesh::{generate_mesh, SizeFieldParams, TriMesh};
pub use physics::{GaussianComponent, PhysParams, SourceMixture};
pub use config::{validate_config, ExperimentConfig};
