use std::collections::BTreeMap;

use rand::Rng;

use super::{CorpusManifest, EmotionLabel, NegativePoolTable, Sample, Split};
use crate::error::{Error, Result};

/// One contrastive training example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveEntry<'a> {
    pub anchor: &'a Sample,
    pub positive: EmotionLabel,
    pub negative: EmotionLabel,
    pub reference: &'a Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch<'a> {
    pub entries: Vec<ContrastiveEntry<'a>>,
}

/// A (source, target) pair of one identity with different emotions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEntry<'a> {
    pub source: &'a Sample,
    pub target: &'a Sample,
    pub reference: &'a Sample,
}

/// Draws batches from the train split of a manifest.
///
/// Anchors are uniform over train samples, negatives uniform over the anchor
/// emotion's pool, and references uniform over the identity's train neutrals.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    pools: &'a NegativePoolTable,
    pool_lists: BTreeMap<EmotionLabel, Vec<EmotionLabel>>,
    train: Vec<&'a Sample>,
    neutrals: BTreeMap<&'a str, Vec<&'a Sample>>,
    by_identity: BTreeMap<&'a str, Vec<&'a Sample>>,
}

impl<'a> Sampler<'a> {
    pub fn new(manifest: &'a CorpusManifest, pools: &'a NegativePoolTable) -> Result<Self> {
        let train: Vec<&Sample> = manifest.split(Split::Train).collect();
        if train.is_empty() {
            return Err(Error::contract("train split is empty"));
        }
        let mut neutrals: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
        let mut by_identity: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
        for s in &train {
            by_identity.entry(&s.identity).or_default().push(s);
            if s.emotion == EmotionLabel::Neutral {
                neutrals.entry(&s.identity).or_default().push(s);
            }
        }
        if let Some(s) = train.iter().find(|s| !neutrals.contains_key(s.identity.as_str())) {
            return Err(Error::MissingNeutral(s.identity.clone()));
        }
        let pool_lists = pools
            .iter()
            .map(|(e, p)| (e, p.iter().copied().collect()))
            .collect();
        Ok(Sampler {
            pools,
            pool_lists,
            train,
            neutrals,
            by_identity,
        })
    }

    pub fn pools(&self) -> &NegativePoolTable {
        self.pools
    }

    fn reference<R: Rng + ?Sized>(&self, identity: &str, rng: &mut R) -> &'a Sample {
        let refs = &self.neutrals[identity];
        refs[rng.random_range(0..refs.len())]
    }

    pub fn contrastive_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<ContrastiveBatch<'a>> {
        if batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        let entries = (0..batch_size)
            .map(|_| {
                let anchor = self.train[rng.random_range(0..self.train.len())];
                let pool = &self.pool_lists[&anchor.emotion];
                let negative = pool[rng.random_range(0..pool.len())];
                let reference = self.reference(&anchor.identity, rng);
                ContrastiveEntry {
                    anchor,
                    positive: anchor.emotion,
                    negative,
                    reference,
                }
            })
            .collect();
        Ok(ContrastiveBatch { entries })
    }

    /// Pairs of train samples of one identity with distinct emotions.
    pub fn pair_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<PairEntry<'a>>> {
        if batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        let mut out = Vec::with_capacity(batch_size);
        while out.len() < batch_size {
            let source = self.train[rng.random_range(0..self.train.len())];
            let mates = &self.by_identity[source.identity.as_str()];
            let n_other = mates.iter().filter(|s| s.emotion != source.emotion).count();
            if n_other == 0 {
                if self.by_identity.values().all(|m| {
                    m.iter().all(|s| s.emotion == m[0].emotion)
                }) {
                    return Err(Error::contract(
                        "no identity has train samples with two different emotions",
                    ));
                }
                continue;
            }
            let pick = rng.random_range(0..n_other);
            let target = mates
                .iter()
                .filter(|s| s.emotion != source.emotion)
                .nth(pick)
                .copied()
                .expect("pick < n_other");
            let reference = self.reference(&source.identity, rng);
            out.push(PairEntry {
                source,
                target,
                reference,
            });
        }
        Ok(out)
    }
}

/// One-shot form of [`Sampler::contrastive_batch`].
pub fn sample_contrastive_batch<'a, R: Rng + ?Sized>(
    manifest: &'a CorpusManifest,
    pools: &'a NegativePoolTable,
    batch_size: usize,
    rng: &mut R,
) -> Result<ContrastiveBatch<'a>> {
    Sampler::new(manifest, pools)?.contrastive_batch(batch_size, rng)
}
