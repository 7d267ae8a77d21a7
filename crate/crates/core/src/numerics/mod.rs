//! Dense linear algebra, cosine similarity and small MLPs, generic over the
//! scalar type.

mod eigen;
pub(crate) use eigen::check_symmetric;
mod matrix;
mod mlp;
mod scalar;
mod vector;

pub use eigen::{psd_sqrt_trace, symmetry_tolerance, SqrtTrace, SymmetricEigen};
pub use matrix::Matrix;
pub use mlp::{
    Activation, DenseLayer, ForwardCache, LayerGradient, Mlp, MlpGradients, MomentumSgd,
};
pub use scalar::Scalar;
pub use vector::{cosine_similarity, cosine_similarity_grad, Similarity, Vector};
