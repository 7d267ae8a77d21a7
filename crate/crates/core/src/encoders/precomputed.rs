use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    gaussian_matrix, keyed_rng, EncoderDims, EncoderSuite, ImageRef, TextMap, TokenSequence,
    Tokenizer,
};
use crate::corpus::{CorpusManifest, EmotionLabel};
use crate::error::{Error, Result};
use crate::{Real, Vector};

const MAGIC: &[u8; 4] = b"PCMF";
const DEFAULT_TOKEN_DIM: usize = 32;

/// Writes a feature file: `PCMF`, little-endian `u32` dimension, then the
/// little-endian `f32` values.
pub fn write_feature_file(path: &Path, values: &[f32]) -> Result<()> {
    let dim = u32::try_from(values.len())
        .map_err(|_| Error::contract("feature vector too long for the file format"))?;
    let mut buf = Vec::with_capacity(8 + 4 * values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&dim.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Load(format!("{} is not a PCMF file", path.display())));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + 4 * dim {
        return Err(Error::Load(format!(
            "{}: header says {dim} values, payload has {} bytes",
            path.display(),
            bytes.len() - 8
        )));
    }
    Ok(bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

/// One record of a feature manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    pub id: String,
    pub identity: String,
    pub emotion: String,
    pub feature_file: PathBuf,
    /// Identity-backbone features; when absent the visual feature is served.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_feature_file: Option<PathBuf>,
}

/// On-disk index of precomputed features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub dim: usize,
    pub samples: Vec<FeatureSample>,
    pub text_embeddings: BTreeMap<String, PathBuf>,
    #[serde(default = "default_token_dim")]
    pub token_dim: usize,
    #[serde(default)]
    pub token_seed: u64,
}

fn default_token_dim() -> usize {
    DEFAULT_TOKEN_DIM
}

impl FeatureManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Metadata of a sample served by a [`PrecomputedSuite`].
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub id: String,
    pub identity: String,
    pub emotion: EmotionLabel,
}

/// Suite serving stored vectors keyed by sample id.
///
/// Prompt embeddings come from the stored table; tokens prepended to a prompt
/// go through a fixed seeded linear map with the same positional weights as the
/// synthetic text encoder.
#[derive(Debug, Clone)]
pub struct PrecomputedSuite {
    dims: EncoderDims,
    samples: Vec<StoredSample>,
    visual: BTreeMap<String, Vector>,
    identity: Option<BTreeMap<String, Vector>>,
    text: BTreeMap<EmotionLabel, Vector>,
    tokenizer: Tokenizer,
    prefix_map: TextMap,
}

fn load_vector(base: &Path, rel: &Path, dim: Option<usize>) -> Result<Vector> {
    let path = base.join(rel);
    let raw = read_feature_file(&path)?;
    if let Some(d) = dim {
        if raw.len() != d {
            return Err(Error::Load(format!(
                "{}: expected dimension {d}, found {}",
                path.display(),
                raw.len()
            )));
        }
    }
    Vector::new(raw.into_iter().map(Real::from).collect())
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

impl PrecomputedSuite {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = FeatureManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_manifest(&manifest, base)
    }

    pub fn from_manifest(manifest: &FeatureManifest, base: &Path) -> Result<Self> {
        if manifest.dim == 0 || manifest.token_dim == 0 {
            return Err(Error::Load("feature and token dimensions must be positive".into()));
        }
        let with_identity = manifest
            .samples
            .iter()
            .filter(|s| s.identity_feature_file.is_some())
            .count();
        if with_identity != 0 && with_identity != manifest.samples.len() {
            return Err(Error::Load(
                "identity_feature_file must be given for all samples or none".into(),
            ));
        }

        let mut samples = Vec::with_capacity(manifest.samples.len());
        let mut visual = BTreeMap::new();
        let mut identity = (with_identity > 0).then(BTreeMap::new);
        let mut d_b = None;
        for s in &manifest.samples {
            let emotion: EmotionLabel = s
                .emotion
                .parse()
                .map_err(|e| Error::Load(format!("sample `{}`: {e}", s.id)))?;
            let v = load_vector(base, &s.feature_file, Some(manifest.dim))?;
            if visual.insert(s.id.clone(), v).is_some() {
                return Err(Error::Load(format!("duplicate sample id `{}`", s.id)));
            }
            if let (Some(map), Some(file)) = (identity.as_mut(), &s.identity_feature_file) {
                let b = load_vector(base, file, d_b)?;
                d_b = Some(b.dim());
                map.insert(s.id.clone(), b);
            }
            samples.push(StoredSample {
                id: s.id.clone(),
                identity: s.identity.clone(),
                emotion,
            });
        }

        let mut text = BTreeMap::new();
        for (name, file) in &manifest.text_embeddings {
            let emotion: EmotionLabel = name
                .parse()
                .map_err(|e| Error::Load(format!("text embedding key: {e}")))?;
            text.insert(emotion, load_vector(base, file, Some(manifest.dim))?);
        }

        let tokenizer = Tokenizer {
            seed: manifest.token_seed,
            d_tok: manifest.token_dim,
        };
        let mut rng = keyed_rng(manifest.token_seed, "prefix-map", &[]);
        let prefix_map = TextMap {
            projection: gaussian_matrix(manifest.dim, manifest.token_dim, 1.0, &mut rng),
        };
        Ok(PrecomputedSuite {
            dims: EncoderDims {
                d_e: manifest.dim,
                d_b: d_b.unwrap_or(manifest.dim),
                d_tok: manifest.token_dim,
            },
            samples,
            visual,
            identity,
            text,
            tokenizer,
            prefix_map,
        })
    }

    pub fn samples(&self) -> &[StoredSample] {
        &self.samples
    }

    pub fn text_embedding(&self, emotion: EmotionLabel) -> Result<&Vector> {
        self.text
            .get(&emotion)
            .ok_or_else(|| Error::Lookup(format!("no stored text embedding for `{emotion}`")))
    }

    fn lookup<'a>(&self, map: &'a BTreeMap<String, Vector>, image: &ImageRef) -> Result<&'a Vector> {
        map.get(image.as_str())
            .ok_or_else(|| Error::Lookup(format!("unknown sample id `{image}`")))
    }
}

impl EncoderSuite for PrecomputedSuite {
    fn dims(&self) -> EncoderDims {
        self.dims
    }

    fn visual_encode(&self, image: &ImageRef) -> Result<Vector> {
        self.lookup(&self.visual, image).cloned()
    }

    fn backbone_identity(&self, image: &ImageRef) -> Result<Vector> {
        match &self.identity {
            Some(map) => self.lookup(map, image).cloned(),
            None => self.visual_encode(image),
        }
    }

    fn tokenize(&self, prompt: &str) -> Result<TokenSequence> {
        self.tokenizer.tokenize(prompt)
    }

    fn text_encode(&self, seq: &TokenSequence) -> Result<Vector> {
        let prompt = seq.prompt().ok_or_else(|| {
            Error::contract("precomputed text encoder only serves tokenized template prompts")
        })?;
        let emotion = EmotionLabel::from_prompt(prompt)?;
        let stored = self.text_embedding(emotion)?;
        if seq.prefix_len() == 0 {
            return Ok(stored.clone());
        }
        stored.add(&self.prefix_map.encode_prefix(seq)?)
    }

    fn text_encode_token_grad(
        &self,
        seq: &TokenSequence,
        position: usize,
        upstream: &Vector,
    ) -> Result<Vector> {
        if position < seq.prefix_len() {
            self.prefix_map.token_grad(seq, position, upstream)
        } else if position < seq.len() {
            Ok(Vector::zeros(seq.token_dim()))
        } else {
            Err(Error::contract(format!(
                "token position {position} out of range for length {}",
                seq.len()
            )))
        }
    }
}

/// Writes the visual and identity features of every manifest sample and the
/// seven template text embeddings into `dir/features/`, as `f32` feature files
/// keyed by sample id, and returns the index. File paths are relative to `dir`.
pub fn export_features(
    suite: &dyn EncoderSuite,
    manifest: &CorpusManifest,
    dir: &Path,
    token_seed: u64,
) -> Result<FeatureManifest> {
    let sub = Path::new("features");
    fs::create_dir_all(dir.join(sub))?;
    let to_f32 = |v: &Vector| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let mut samples = Vec::with_capacity(manifest.len());
    for s in manifest.samples() {
        let feature_file = sub.join(format!("{}.pcmf", s.id));
        let identity_file = sub.join(format!("{}.identity.pcmf", s.id));
        write_feature_file(&dir.join(&feature_file), &to_f32(&suite.visual_encode(&s.image_ref)?))?;
        write_feature_file(
            &dir.join(&identity_file),
            &to_f32(&suite.backbone_identity(&s.image_ref)?),
        )?;
        samples.push(FeatureSample {
            id: s.id.clone(),
            identity: s.identity.clone(),
            emotion: s.emotion.to_string(),
            feature_file,
            identity_feature_file: Some(identity_file),
        });
    }
    let mut text_embeddings = BTreeMap::new();
    for e in EmotionLabel::ALL {
        let file = sub.join(format!("text-{e}.pcmf"));
        let t = suite.text_encode(&suite.tokenize(&e.prompt())?)?;
        write_feature_file(&dir.join(&file), &to_f32(&t))?;
        text_embeddings.insert(e.to_string(), file);
    }
    let dims = suite.dims();
    Ok(FeatureManifest {
        dim: dims.d_e,
        samples,
        text_embeddings,
        token_dim: dims.d_tok,
        token_seed,
    })
}
