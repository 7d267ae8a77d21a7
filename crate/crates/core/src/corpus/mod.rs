//! Identity- and emotion-labelled samples, synthetic corpus generation and
//! contrastive batch sampling under negative pools.

mod emotion;
mod manifest;
mod pools;
mod sampling;

pub use emotion::{EmotionLabel, EMOTION_COUNT};
pub use manifest::{
    generate_synthetic_corpus, CorpusManifest, Sample, Split, WorldRef, MANIFEST_FORMAT_VERSION,
};
pub use pools::NegativePoolTable;
pub use sampling::{
    sample_contrastive_batch, ContrastiveBatch, ContrastiveEntry, PairEntry, Sampler,
};
