pub mod baselines;
pub mod cli;
pub mod config;
pub mod dtcwt;
pub mod error;
pub mod filters;
pub mod gating;
pub mod gradcheck;
pub mod image;
pub mod model;
pub mod npt;
mod plane;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
