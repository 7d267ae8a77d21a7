//! Modality-gap quantification, cross-modal similarity matrices and
//! similarity-driven negative pools.

mod fixtures;
mod gap;
mod pools;

pub use fixtures::{
    load_paper_pools, paper_gap_table, paper_similarity_matrix, TABLE_S1_JSON, TABLE_S1_SHA256,
    TABLE_S2_JSON, TABLE_S2_SHA256, TABLE_S3_JSON, TABLE_S3_SHA256,
};
pub use gap::{
    cross_modal_matrix, features_by_emotion, modality_gap_report, template_text_embeddings,
    CrossModalSimilarityMatrix, FeaturesByEmotion, GapAverages, GapDelta, GapReport, GapRow,
    TextByEmotion,
};
pub use pools::{compare_pools, derive_negative_pools, PoolComparison, PoolDiscrepancy, MAX_EXCLUDED};
