pub mod attribution;
pub mod bandit;
pub mod baselines;
pub mod data;
pub mod error;
pub mod harness;
pub mod imgproc;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;

pub use error::{BeeError, Result};
pub use tensor::{Curve, Tensor};
