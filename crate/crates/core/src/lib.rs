//! Surface parameterization onto the flat torus and the multi-chart tensor
//! format built on top of it.

pub mod error;
pub mod geom;
pub mod chartset;
pub mod mesh;
pub mod synth;
pub mod torus;

pub use error::{Error, Result};
pub use mesh::TriangleMesh;
