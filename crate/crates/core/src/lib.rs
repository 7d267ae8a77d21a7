pub mod analysis;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod pepl;
pub mod supervision;
pub mod vtedc;

pub use error::{Error, Result};

/// Scalar used by the training and analysis layers.
pub type Real = f64;
pub type Vector = numerics::Vector<Real>;
pub type Matrix = numerics::Matrix<Real>;
pub type Mlp = numerics::Mlp<Real>;
pub type MlpGradients = numerics::MlpGradients<Real>;
