use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmotionLabel;
use crate::encoders::{ImageKey, ImageRef, PrecomputedSuite, SyntheticWorld, WorldConfig};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
const VAL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One labelled image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub identity: String,
    pub emotion: EmotionLabel,
    pub image_ref: ImageRef,
    /// Id of a neutral sample of the same identity.
    pub neutral_ref: String,
    pub split: Split,
}

/// Seed and configuration from which a synthetic world is rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldRef {
    pub seed: u64,
    pub config: WorldConfig,
}

/// Validated collection of samples with a train/val split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ManifestRepr", into = "ManifestRepr")]
pub struct CorpusManifest {
    world: Option<WorldRef>,
    samples: Vec<Sample>,
    index: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct ManifestRepr {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    world: Option<WorldRef>,
    samples: Vec<Sample>,
}

impl TryFrom<ManifestRepr> for CorpusManifest {
    type Error = Error;

    fn try_from(r: ManifestRepr) -> Result<Self> {
        if r.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Load(format!(
                "unsupported manifest format_version {}",
                r.format_version
            )));
        }
        CorpusManifest::new(r.samples, r.world)
    }
}

impl From<CorpusManifest> for ManifestRepr {
    fn from(m: CorpusManifest) -> Self {
        ManifestRepr {
            format_version: MANIFEST_FORMAT_VERSION,
            world: m.world,
            samples: m.samples,
        }
    }
}

impl CorpusManifest {
    pub fn new(samples: Vec<Sample>, world: Option<WorldRef>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate sample id `{}`", s.id)));
            }
        }
        let mut has_neutral = BTreeSet::new();
        for s in &samples {
            let r = index
                .get(&s.neutral_ref)
                .map(|&i| &samples[i])
                .ok_or_else(|| {
                    Error::contract(format!(
                        "sample `{}`: neutral_ref `{}` does not exist",
                        s.id, s.neutral_ref
                    ))
                })?;
            if r.emotion != EmotionLabel::Neutral || r.identity != s.identity {
                return Err(Error::contract(format!(
                    "sample `{}`: neutral_ref `{}` is not a neutral sample of `{}`",
                    s.id, r.id, s.identity
                )));
            }
            if s.emotion == EmotionLabel::Neutral {
                has_neutral.insert(s.identity.as_str());
            }
        }
        if let Some(s) = samples.iter().find(|s| !has_neutral.contains(s.identity.as_str())) {
            return Err(Error::MissingNeutral(s.identity.clone()));
        }
        Ok(CorpusManifest {
            world,
            samples,
            index,
        })
    }

    pub fn world(&self) -> Option<&WorldRef> {
        self.world.as_ref()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&Sample> {
        self.index
            .get(id)
            .map(|&i| &self.samples[i])
            .ok_or_else(|| Error::Lookup(format!("unknown sample id `{id}`")))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Identities in order of first appearance.
    pub fn identities(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.identity.as_str()))
            .map(|s| s.identity.as_str())
            .collect()
    }

    /// The sample a given sample's `neutral_ref` points to.
    pub fn neutral_reference(&self, sample: &Sample) -> Result<&Sample> {
        self.get(&sample.neutral_ref)
    }

    /// Copy restricted to the given split, with neutral references kept
    /// resolvable by retaining the referenced samples.
    pub fn restricted(&self, split: Split) -> Result<Self> {
        let mut keep: BTreeSet<&str> = BTreeSet::new();
        for s in self.split(split) {
            keep.insert(&s.id);
            keep.insert(&s.neutral_ref);
        }
        let samples = self
            .samples
            .iter()
            .filter(|s| keep.contains(s.id.as_str()))
            .cloned()
            .collect();
        CorpusManifest::new(samples, self.world.clone())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Builds a manifest over the samples of a precomputed-feature suite.
    /// Each sample references the first neutral sample of its identity.
    pub fn from_precomputed(suite: &PrecomputedSuite, split_seed: u64) -> Result<Self> {
        let mut first_neutral: BTreeMap<&str, &str> = BTreeMap::new();
        for s in suite.samples() {
            if s.emotion == EmotionLabel::Neutral {
                first_neutral.entry(&s.identity).or_insert(&s.id);
            }
        }
        let mut samples = Vec::with_capacity(suite.samples().len());
        for s in suite.samples() {
            let neutral = first_neutral
                .get(s.identity.as_str())
                .ok_or_else(|| Error::MissingNeutral(s.identity.clone()))?;
            samples.push(Sample {
                id: s.id.clone(),
                identity: s.identity.clone(),
                emotion: s.emotion,
                image_ref: ImageRef(s.id.clone()),
                neutral_ref: (*neutral).to_owned(),
                split: Split::Train,
            });
        }
        assign_split(&mut samples, split_seed);
        CorpusManifest::new(samples, None)
    }
}

fn split_rank(seed: u64, id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(b"split");
    h.update(id.as_bytes());
    h.finalize().into()
}

/// Marks about 10% of each identity's samples as validation, choosing by a
/// seeded hash of the sample id and keeping one train neutral per identity.
fn assign_split(samples: &mut [Sample], seed: u64) {
    let mut by_identity: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_identity.entry(s.identity.clone()).or_default().push(i);
    }
    for members in by_identity.values() {
        let mut order = members.clone();
        order.sort_by_cached_key(|&i| split_rank(seed, &samples[i].id));
        let n_val = (members.len() as f64 * VAL_FRACTION).round() as usize;
        let mut train_neutrals = members
            .iter()
            .filter(|&&i| samples[i].emotion == EmotionLabel::Neutral)
            .count();
        let mut chosen = 0;
        for i in order {
            if chosen == n_val {
                break;
            }
            if samples[i].emotion == EmotionLabel::Neutral {
                if train_neutrals <= 1 {
                    continue;
                }
                train_neutrals -= 1;
            }
            samples[i].split = Split::Val;
            chosen += 1;
        }
    }
}

/// `n_identities × 7 × per_identity_per_emotion` samples from a synthetic
/// world, with a deterministic identity-stratified 90/10 split.
pub fn generate_synthetic_corpus(
    world: &SyntheticWorld,
    per_identity_per_emotion: usize,
) -> Result<CorpusManifest> {
    if per_identity_per_emotion == 0 {
        return Err(Error::contract("per_identity_per_emotion must be at least 1"));
    }
    let width = (world.n_identities() - 1).to_string().len().max(3);
    let mut samples = Vec::new();
    for identity in 0..world.n_identities() {
        let name = format!("id{identity:0width$}");
        let neutral_ref = format!("{name}-neutral-0");
        for emotion in EmotionLabel::ALL {
            for instance in 0..per_identity_per_emotion {
                let key = ImageKey {
                    identity,
                    emotion,
                    instance,
                };
                samples.push(Sample {
                    id: format!("{name}-{emotion}-{instance}"),
                    identity: name.clone(),
                    emotion,
                    image_ref: key.to_ref(),
                    neutral_ref: neutral_ref.clone(),
                    split: Split::Train,
                });
            }
        }
    }
    assign_split(&mut samples, world.seed());
    CorpusManifest::new(
        samples,
        Some(WorldRef {
            seed: world.seed(),
            config: world.config().clone(),
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::build_synthetic_world;

    fn world(n: usize) -> SyntheticWorld {
        let cfg = WorldConfig {
            n_identities: n,
            ..WorldConfig::default()
        };
        build_synthetic_world(1, &cfg).unwrap()
    }

    #[test]
    fn counts_and_determinism() {
        let m = generate_synthetic_corpus(&world(2), 1).unwrap();
        assert_eq!(m.len(), 14);
        assert_eq!(m, generate_synthetic_corpus(&world(2), 1).unwrap());
        assert!(generate_synthetic_corpus(&world(2), 0).is_err());
    }

    #[test]
    fn split_is_stratified_and_keeps_train_neutral() {
        let m = generate_synthetic_corpus(&world(4), 3).unwrap();
        for id in m.identities() {
            let mine: Vec<_> = m.samples().iter().filter(|s| s.identity == id).collect();
            let val = mine.iter().filter(|s| s.split == Split::Val).count();
            assert_eq!(val, 2);
            assert!(mine
                .iter()
                .any(|s| s.split == Split::Train && s.emotion == EmotionLabel::Neutral));
        }
    }

    #[test]
    fn json_round_trip() {
        let m = generate_synthetic_corpus(&world(2), 2).unwrap();
        let back: CorpusManifest = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_neutral_is_named() {
        let m = generate_synthetic_corpus(&world(2), 1).unwrap();
        let samples: Vec<Sample> = m
            .samples()
            .iter()
            .filter(|s| !(s.identity == "id001" && s.emotion == EmotionLabel::Neutral))
            .cloned()
            .collect();
        match CorpusManifest::new(samples, None) {
            Err(Error::Contract(msg)) => assert!(msg.contains("id001-neutral-0")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
