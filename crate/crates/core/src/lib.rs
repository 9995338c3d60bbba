//! Multi-task sequence-to-sequence semantic parsing.
//!
//! The core is generic over the scalar type; the aliases below fix it to `f64`.

pub mod amr;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod numkernel;
pub mod sampler;
pub mod scalar;
pub mod seed;
pub mod toy;
pub mod trainer;

pub use scalar::Scalar;

pub type Tensor = numkernel::Tensor<f64>;
pub type ParamStore = numkernel::ParamStore<f64>;
pub type ParserModel = model::Parser<f64>;
