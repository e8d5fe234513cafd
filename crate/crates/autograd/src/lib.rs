//! A compact reverse-mode autodiff engine.
//!
//! Values are `f64` [`ndarray`] arrays held in reference-counted graph
//! nodes ([`Var`]). Operations record a backward closure only when an input
//! tracks gradients, so inference passes allocate no graph. Matrix products
//! and convolutions go through `matrixmultiply`.

mod conv;
pub mod gradcheck;
mod linalg;
pub mod nn;
mod norm;
mod ops;
pub mod optim;
pub mod params;
mod var;

pub use conv::Conv2dGeometry;
pub use linalg::array;
pub use norm::BatchStats;
pub use optim::{LrSchedule, Optimizer, OptimizerSpec};
pub use params::{Bound, Param, ParamError, ParamKind, ParamStore};
pub use var::{Array, Gradients, Var};
