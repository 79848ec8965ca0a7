//! Neural signed-distance fields tuned toward developable surfaces.
//!
//! Fit an implicit network to an oriented point cloud, fine-tune it with
//! rank-minimization regularizers on its input Hessian, extract the zero level
//! set with marching cubes, and score the result with implicit-curvature and
//! Chamfer metrics.
//!
//! All numerics are generic over [`Real`] (`f32`/`f64`); the aliases at the
//! crate root fix the `f64` instantiations used for training.

mod error;
mod scalar;

pub mod checkpoint;
pub mod curvature;
pub mod eval;
pub mod field;
pub mod jet;
pub mod mesher;
pub mod mlp;
pub mod regularizers;
pub mod sampling;
pub mod shapes;
pub mod trainer;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::{sign0, Real};

pub type Point3 = [f64; 3];
pub type Jet = jet::Jet2<f64>;
pub type Mlp = mlp::MlpParams<f64>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
pub type Curvature = curvature::CurvatureSample<f64>;
pub type AdamState = trainer::AdamState<f64>;
