//! Low-multi-rank high-order Bayesian robust tensor factorization.
//!
//! A real tensor `Y = X + S + E` of order `d >= 3` is split into a low
//! multi-rank part `X = U *_L V^†` (t-product under an invertible transform
//! `L` over modes 3..d), a sparse part `S` and dense noise `E` by
//! variational Bayesian inference with automatic rank determination.

pub mod corrupt;
pub mod error;
mod linalg;
pub mod metrics;
pub mod model;
pub mod npy;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod transform;
pub mod tsvd;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor, DenseTensor, Element, RealTensor, SliceIndex};
pub use transform::{TransformKind, TransformSpec};
pub use model::{HyperParams, InitRank, RunOutput, RunTrace};
pub use tsvd::{MultiRank, SvdWidth, TSvd};
