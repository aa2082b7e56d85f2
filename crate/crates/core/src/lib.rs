//! Multiple-instance regression: an order-invariant attention model over
//! bags of instances, aggregated and instance-level baselines, optional
//! raw-moment features, and a repeated cross-validation harness.

pub mod attention;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod moments;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
