//! Numerical laboratory for Fourier decay of self-conformal measures.
//!
//! Modules follow the chain of the argument: [`ifs`] (maps, cylinders, UNI
//! search), [`measure`] (sampling and Fourier transforms), [`transfer_op`]
//! (complex transfer operators on a Chebyshev grid), [`random_model`]
//! (Bernoulli disintegration and Dolgopyat operators), [`renewal`] (cocycle
//! random walk and equidistribution) and [`pipeline`] (the decay report).

pub mod corpus;
pub mod error;
pub mod ifs;
pub mod measure;
pub mod pipeline;
pub mod random_model;
pub mod renewal;
pub mod rng;
pub mod stats;
pub mod transfer_op;

pub use error::{Error, ErrorKind, Result};
