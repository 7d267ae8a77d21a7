use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::gap::{CrossModalSimilarityMatrix, GapAverages, GapReport, GapRow};
use crate::corpus::{EmotionLabel, NegativePoolTable};
use crate::error::{Error, Result};
use crate::Real;

pub const TABLE_S1_JSON: &str = include_str!("../../data/table_s1.json");
pub const TABLE_S2_JSON: &str = include_str!("../../data/table_s2.json");
pub const TABLE_S3_JSON: &str = include_str!("../../data/table_s3.json");

pub const TABLE_S1_SHA256: &str = "4b26f89a68802efd82a1cdb0402cda7423075b8e3107e7904831711fa84ca274";
pub const TABLE_S2_SHA256: &str = "58e4dc0a9d439cb5b8b388f59b03945d2ef8ab34f008f771c0352d1462c362ef";
pub const TABLE_S3_SHA256: &str = "bf5720159f02e3c87daf8b0dd8c1308997130bc40c010a771e6d6419c1f8c507";

fn verified(name: &'static str, text: &str, expected: &str) -> Result<()> {
    if hex::encode(Sha256::digest(text.as_bytes())) != expected {
        return Err(Error::Checksum(name));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GapTable {
    rows: Vec<GapRow>,
    average: GapAverages,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimilarityTable {
    images_per_row: usize,
    columns: Vec<EmotionLabel>,
    rows: BTreeMap<EmotionLabel, Vec<Real>>,
}

/// Stored modality-gap table measured on real data; not recomputable here.
pub fn paper_gap_table() -> Result<GapReport> {
    verified("table_s1.json", TABLE_S1_JSON, TABLE_S1_SHA256)?;
    let t: GapTable = serde_json::from_str(TABLE_S1_JSON)?;
    Ok(GapReport {
        rows: t.rows,
        average: t.average,
    })
}

/// Stored 7×7 image-to-text similarity matrix, reordered to emotion codes.
pub fn paper_similarity_matrix() -> Result<CrossModalSimilarityMatrix> {
    verified("table_s2.json", TABLE_S2_JSON, TABLE_S2_SHA256)?;
    let t: SimilarityTable = serde_json::from_str(TABLE_S2_JSON)?;
    let mut values = Vec::new();
    for i in EmotionLabel::ALL {
        let row = t
            .rows
            .get(&i)
            .ok_or_else(|| Error::Load(format!("table_s2.json has no `{i}` row")))?;
        let cells = EmotionLabel::ALL
            .iter()
            .map(|j| {
                t.columns
                    .iter()
                    .position(|c| c == j)
                    .and_then(|k| row.get(k).copied())
                    .ok_or_else(|| Error::Load(format!("table_s2.json has no `{j}` column")))
            })
            .collect::<Result<Vec<_>>>()?;
        values.push(cells);
    }
    let counts = vec![vec![t.images_per_row; values.len()]; values.len()];
    CrossModalSimilarityMatrix::new(values, counts)
}

/// The verbatim negative pools used for pre-training.
pub fn load_paper_pools() -> Result<NegativePoolTable> {
    verified("table_s3.json", TABLE_S3_JSON, TABLE_S3_SHA256)?;
    let map: BTreeMap<EmotionLabel, BTreeSet<EmotionLabel>> = serde_json::from_str(TABLE_S3_JSON)?;
    NegativePoolTable::new(map)
}
