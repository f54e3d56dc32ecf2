pub mod config;
pub mod error;
pub mod experiments;
pub mod gramian;
pub mod kernels;
pub mod propagator;
pub(crate) mod quadrature;
pub mod regularizer;
pub mod resolvent;
pub mod semilinear;
pub mod space;

pub use error::{Error, Result};
