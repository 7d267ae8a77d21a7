use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    gaussian_matrix, gaussian_vector, keyed_rng, EncoderDims, EncoderSuite, ImageRef, TextMap,
    TokenSequence, Tokenizer,
};
use crate::corpus::{EmotionLabel, EMOTION_COUNT};
use crate::error::{Error, Result};
use crate::{Matrix, Real, Vector};

const MAX_REDRAWS: usize = 10;
const RANK_TOL: Real = 1e-8;

/// Parameters of the synthetic generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_identities: usize,
    /// Latent dimension: identity coordinates plus one coordinate per emotion.
    pub d_latent: usize,
    pub d_e: usize,
    pub d_b: usize,
    pub d_tok: usize,
    /// Standard deviation of per-image Gaussian noise in embedding space.
    pub noise_sigma: Real,
    /// Norm of the modality offset `g`.
    pub gap: Real,
    /// Length of the identity term `A·z` for a unit identity latent.
    pub identity_scale: Real,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_identities: 4,
            d_latent: 16,
            d_e: 64,
            d_b: 32,
            d_tok: 32,
            noise_sigma: 0.05,
            gap: 1.5,
            identity_scale: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn d_identity(&self) -> usize {
        self.d_latent.saturating_sub(EMOTION_COUNT)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::contract("a world needs at least 2 identities"));
        }
        if self.d_e == 0 || self.d_b == 0 || self.d_tok == 0 {
            return Err(Error::contract("world dimensions must be positive"));
        }
        if self.d_latent <= EMOTION_COUNT {
            return Err(Error::contract(format!(
                "d_latent must exceed {EMOTION_COUNT} to leave room for identity coordinates"
            )));
        }
        if self.d_e <= self.d_latent {
            return Err(Error::contract(
                "d_e must exceed d_latent so the modality offset can leave the visual subspace",
            ));
        }
        if self.d_b < self.d_identity() {
            return Err(Error::contract("d_b must be at least the identity dimension"));
        }
        if self.d_tok < EMOTION_COUNT {
            return Err(Error::contract("d_tok must be at least 7"));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("gap", self.gap),
            ("identity_scale", self.identity_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::contract(format!("{name} must be finite and >= 0")));
            }
        }
        if self.identity_scale == 0.0 {
            return Err(Error::contract("identity_scale must be positive"));
        }
        Ok(())
    }
}

/// Address of one synthetic image: `syn/{identity}/{emotion}/{instance}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageKey {
    pub identity: usize,
    pub emotion: EmotionLabel,
    pub instance: usize,
}

impl ImageKey {
    pub fn to_ref(self) -> ImageRef {
        ImageRef(self.to_string())
    }
}

impl fmt::Display for ImageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "syn/{}/{}/{}", self.identity, self.emotion, self.instance)
    }
}

impl FromStr for ImageKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Lookup(format!("`{s}` is not a synthetic image reference"));
        let parts: Vec<&str> = s.split('/').collect();
        match parts.as_slice() {
            ["syn", id, emo, inst] => Ok(ImageKey {
                identity: id.parse().map_err(|_| bad())?,
                emotion: emo.parse().map_err(|_| bad())?,
                instance: inst.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Seeded generative world with known ground truth.
///
/// Latent codes split into identity coordinates `z` (unit sphere) and one
/// coordinate per emotion. Text embedding of emotion k is `B·e_k`, which equals
/// the text encoding of its prompt; an image of identity z with emotion k is
/// `A·(z + e_k) + g + ε` with `A = [s·Q | B]`, `Q` orthonormal and orthogonal to
/// the text directions, and `g` orthogonal to the range of `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    seed: u64,
    config: WorldConfig,
    tokenizer: Tokenizer,
    text_map: TextMap,
    identity_latents: Vec<Vector>,
    emotion_prototypes: Vec<Vector>,
    offset: Vector,
    visual_map: Matrix,
    text_mixing: Matrix,
    backbone_map: Matrix,
}

pub fn build_synthetic_world(seed: u64, config: &WorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let d_id = config.d_identity();
    let tokenizer = Tokenizer {
        seed,
        d_tok: config.d_tok,
    };
    let prompts: Vec<TokenSequence> = EmotionLabel::ALL
        .iter()
        .map(|e| tokenizer.tokenize(&e.prompt()))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REDRAWS {
        // Text side, rescaled so prompt embeddings have unit mean norm.
        let raw = TextMap {
            projection: gaussian_matrix(config.d_e, config.d_tok, 1.0, &mut rng),
        };
        let mean_norm = prompts
            .iter()
            .map(|p| raw.encode(p).map(|t| t.norm()))
            .sum::<Result<Real>>()?
            / EMOTION_COUNT as Real;
        if mean_norm <= Real::EPSILON {
            continue;
        }
        let text_map = TextMap {
            projection: raw.projection.scale(1.0 / mean_norm),
        };
        let text_cols: Vec<Vector> = prompts
            .iter()
            .map(|p| text_map.encode(p))
            .collect::<Result<_>>()?;
        let text_mixing = Matrix::from_columns(&text_cols)?;
        if text_mixing.column_rank(RANK_TOL) < EMOTION_COUNT {
            continue;
        }

        // Identity directions orthogonal to the text directions.
        let mut basis = Vec::new();
        if !extend_orthonormal(&mut basis, &text_cols) {
            continue;
        }
        let draws: Vec<Vector> = (0..d_id)
            .map(|_| gaussian_vector(config.d_e, 1.0, &mut rng))
            .collect();
        let start = basis.len();
        if !extend_orthonormal(&mut basis, &draws) {
            continue;
        }
        let mut visual_cols: Vec<Vector> = basis[start..]
            .iter()
            .map(|q| q.scale(config.identity_scale))
            .collect();
        visual_cols.extend(text_cols.iter().cloned());
        let visual_map = Matrix::from_columns(&visual_cols)?;
        if visual_map.column_rank(RANK_TOL) < config.d_latent {
            continue;
        }

        let offset = if config.gap > 0.0 {
            let draw = gaussian_vector(config.d_e, 1.0, &mut rng);
            match residual(&basis, &draw) {
                Some(r) => r.scale(config.gap / r.norm()),
                None => continue,
            }
        } else {
            Vector::zeros(config.d_e)
        };

        let backbone_map = gaussian_matrix(
            config.d_b,
            d_id,
            1.0 / (d_id as Real).sqrt(),
            &mut rng,
        );
        if backbone_map.column_rank(RANK_TOL) < d_id {
            continue;
        }

        let identity_latents = (0..config.n_identities)
            .map(|_| loop {
                let z = gaussian_vector(d_id, 1.0, &mut rng);
                let n = z.norm();
                if n > 1e-6 {
                    let mut full = z.scale(1.0 / n).into_inner();
                    full.resize(config.d_latent, 0.0);
                    break Vector::from_raw(full);
                }
            })
            .collect();
        let emotion_prototypes = (0..EMOTION_COUNT)
            .map(|k| Vector::one_hot(config.d_latent, d_id + k))
            .collect();

        return Ok(SyntheticWorld {
            seed,
            config: config.clone(),
            tokenizer,
            text_map,
            identity_latents,
            emotion_prototypes,
            offset,
            visual_map,
            text_mixing,
            backbone_map,
        });
    }
    Err(Error::Generation(format!(
        "mixing maps stayed rank-deficient after {MAX_REDRAWS} redraws"
    )))
}

// Gram-Schmidt residual of `v` against an orthonormal basis; None if it vanishes.
fn residual(basis: &[Vector], v: &Vector) -> Option<Vector> {
    let mut r = v.clone();
    // Two passes for numerical orthogonality.
    for _ in 0..2 {
        for b in basis {
            let p = b.dot(&r).ok()?;
            r.axpy(-p, b).ok()?;
        }
    }
    (r.norm() > RANK_TOL * v.norm().max(1.0)).then_some(r)
}

fn extend_orthonormal(basis: &mut Vec<Vector>, vs: &[Vector]) -> bool {
    for v in vs {
        match residual(basis, v) {
            Some(r) => {
                let n = r.norm();
                basis.push(r.scale(1.0 / n));
            }
            None => return false,
        }
    }
    true
}

impl SyntheticWorld {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn n_identities(&self) -> usize {
        self.identity_latents.len()
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn text_map(&self) -> &TextMap {
        &self.text_map
    }

    /// Latent code of an identity; zero on the emotion coordinates.
    pub fn identity_latent(&self, identity: usize) -> Result<&Vector> {
        self.identity_latents
            .get(identity)
            .ok_or_else(|| Error::Lookup(format!("identity {identity} not in world")))
    }

    pub fn emotion_prototype(&self, emotion: EmotionLabel) -> &Vector {
        &self.emotion_prototypes[emotion.code()]
    }

    /// Modality offset `g`.
    pub fn offset(&self) -> &Vector {
        &self.offset
    }

    /// `A`, shape `d_e × d_latent`.
    pub fn visual_map(&self) -> &Matrix {
        &self.visual_map
    }

    /// `B`, shape `d_e × 7`; column k is the text embedding of emotion k.
    pub fn text_mixing(&self) -> &Matrix {
        &self.text_mixing
    }

    /// `C`, shape `d_b × d_identity`, applied to the identity coordinates.
    pub fn backbone_map(&self) -> &Matrix {
        &self.backbone_map
    }

    pub fn text_embedding(&self, emotion: EmotionLabel) -> Vector {
        self.text_mixing.column(emotion.code())
    }

    /// `A·z` for an identity.
    pub fn identity_term(&self, identity: usize) -> Result<Vector> {
        self.visual_map.matvec(self.identity_latent(identity)?)
    }

    /// Noise-free visual embedding `A·(z + e_k) + g`.
    pub fn clean_visual(&self, identity: usize, emotion: EmotionLabel) -> Result<Vector> {
        let latent = self
            .identity_latent(identity)?
            .add(self.emotion_prototype(emotion))?;
        self.visual_map.matvec(&latent)?.add(&self.offset)
    }

    pub fn noise(&self, image: &ImageRef) -> Vector {
        let mut rng = keyed_rng(self.seed, "noise", image.as_str().as_bytes());
        gaussian_vector(self.config.d_e, self.config.noise_sigma, &mut rng)
    }

    fn resolve(&self, image: &ImageRef) -> Result<ImageKey> {
        let key: ImageKey = image.as_str().parse()?;
        self.identity_latent(key.identity)?;
        Ok(key)
    }
}

impl EncoderSuite for SyntheticWorld {
    fn dims(&self) -> EncoderDims {
        EncoderDims {
            d_e: self.config.d_e,
            d_b: self.config.d_b,
            d_tok: self.config.d_tok,
        }
    }

    fn visual_encode(&self, image: &ImageRef) -> Result<Vector> {
        let key = self.resolve(image)?;
        let clean = self.clean_visual(key.identity, key.emotion)?;
        if self.config.noise_sigma == 0.0 {
            return Ok(clean);
        }
        clean.add(&self.noise(image))
    }

    fn backbone_identity(&self, image: &ImageRef) -> Result<Vector> {
        let key = self.resolve(image)?;
        let z = self.identity_latent(key.identity)?;
        let d_id = self.config.d_identity();
        let head = Vector::from_raw(z.as_slice()[..d_id].to_vec());
        self.backbone_map.matvec(&head)
    }

    fn tokenize(&self, prompt: &str) -> Result<TokenSequence> {
        self.tokenizer.tokenize(prompt)
    }

    fn text_encode(&self, seq: &TokenSequence) -> Result<Vector> {
        self.text_map.encode(seq)
    }

    fn text_encode_token_grad(
        &self,
        seq: &TokenSequence,
        position: usize,
        upstream: &Vector,
    ) -> Result<Vector> {
        self.text_map.token_grad(seq, position, upstream)
    }
}
