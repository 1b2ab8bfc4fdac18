//! Conditional GAN fast simulation of proton zero-degree calorimeter
//! responses, with selective diversity, intensity, and shower-center
//! regularization.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
