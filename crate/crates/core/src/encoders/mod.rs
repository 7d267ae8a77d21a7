//! Frozen encoder abstraction: visual encoder, text encoder, tokenizer and
//! identity backbone.
//!
//! Two implementations are provided. [`SyntheticWorld`] is a seeded generative
//! model whose ground truth is known in closed form. [`PrecomputedSuite`]
//! serves vectors that were extracted offline by a real vision-language model.

mod precomputed;
mod synthetic;
mod text;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::{Matrix, Vector};

pub use precomputed::{
    export_features, read_feature_file, write_feature_file, FeatureManifest, FeatureSample, PrecomputedSuite,
    StoredSample,
};
pub use synthetic::{build_synthetic_world, ImageKey, SyntheticWorld, WorldConfig};
pub use text::{position_weight, TextMap, TokenSequence, Tokenizer};

/// Opaque key that an [`EncoderSuite`] resolves to an image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageRef {
    fn from(s: &str) -> Self {
        ImageRef(s.to_owned())
    }
}

/// Embedding dimensions of a suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    /// Shared image/text embedding space.
    pub d_e: usize,
    /// Identity backbone features.
    pub d_b: usize,
    /// Token vectors.
    pub d_tok: usize,
}

/// Frozen encoders. All maps are deterministic and never change after
/// construction.
pub trait EncoderSuite: Send + Sync {
    fn dims(&self) -> EncoderDims;

    fn visual_encode(&self, image: &ImageRef) -> Result<Vector>;

    fn backbone_identity(&self, image: &ImageRef) -> Result<Vector>;

    fn tokenize(&self, prompt: &str) -> Result<TokenSequence>;

    fn text_encode(&self, seq: &TokenSequence) -> Result<Vector>;

    /// Gradient of `⟨text_encode(seq), upstream⟩` with respect to token `position`.
    fn text_encode_token_grad(
        &self,
        seq: &TokenSequence,
        position: usize,
        upstream: &Vector,
    ) -> Result<Vector>;
}

impl<T: EncoderSuite + ?Sized> EncoderSuite for &T {
    fn dims(&self) -> EncoderDims {
        (**self).dims()
    }
    fn visual_encode(&self, image: &ImageRef) -> Result<Vector> {
        (**self).visual_encode(image)
    }
    fn backbone_identity(&self, image: &ImageRef) -> Result<Vector> {
        (**self).backbone_identity(image)
    }
    fn tokenize(&self, prompt: &str) -> Result<TokenSequence> {
        (**self).tokenize(prompt)
    }
    fn text_encode(&self, seq: &TokenSequence) -> Result<Vector> {
        (**self).text_encode(seq)
    }
    fn text_encode_token_grad(
        &self,
        seq: &TokenSequence,
        position: usize,
        upstream: &Vector,
    ) -> Result<Vector> {
        (**self).text_encode_token_grad(seq, position, upstream)
    }
}

// Shared by both suites: seeds a generator from a domain tag and key bytes.
pub(crate) fn keyed_rng(seed: u64, domain: &str, key: &[u8]) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    use sha2::{Digest, Sha256};

    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h.update(key);
    rand_chacha::ChaCha8Rng::from_seed(h.finalize().into())
}

pub(crate) fn gaussian_matrix(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut impl rand::Rng,
) -> Matrix {
    use rand_distr::{Distribution, StandardNormal};
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

pub(crate) fn gaussian_vector(dim: usize, std: f64, rng: &mut impl rand::Rng) -> Vector {
    use rand_distr::{Distribution, StandardNormal};
    Vector::from_raw(
        (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect(),
    )
}
