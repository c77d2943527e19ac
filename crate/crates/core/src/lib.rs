pub mod bayesopt;
pub mod datasets;
pub mod error;
pub mod fft;
pub mod gp;
pub mod features;
pub mod filterbank;
pub mod image;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod scattering;
pub mod seeds;
pub mod svgp;

pub use error::{Error, Result};
