use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EmotionLabel;
use crate::error::{Error, Result};

/// Admissible negative emotions for each anchor emotion.
///
/// Every emotion has a non-empty pool that never contains the emotion itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<EmotionLabel, BTreeSet<EmotionLabel>>")]
#[serde(into = "BTreeMap<EmotionLabel, BTreeSet<EmotionLabel>>")]
pub struct NegativePoolTable {
    pools: BTreeMap<EmotionLabel, BTreeSet<EmotionLabel>>,
}

impl NegativePoolTable {
    pub fn new(pools: BTreeMap<EmotionLabel, BTreeSet<EmotionLabel>>) -> Result<Self> {
        for e in EmotionLabel::ALL {
            let pool = pools
                .get(&e)
                .ok_or_else(|| Error::contract(format!("no negative pool for `{e}`")))?;
            if pool.is_empty() {
                return Err(Error::contract(format!("negative pool for `{e}` is empty")));
            }
            if pool.contains(&e) {
                return Err(Error::contract(format!("negative pool for `{e}` contains itself")));
            }
        }
        Ok(NegativePoolTable { pools })
    }

    /// Every other emotion is admissible.
    pub fn all_others() -> Self {
        let pools = EmotionLabel::ALL
            .iter()
            .map(|&e| (e, EmotionLabel::ALL.iter().copied().filter(|&o| o != e).collect()))
            .collect();
        NegativePoolTable { pools }
    }

    pub fn pool(&self, emotion: EmotionLabel) -> &BTreeSet<EmotionLabel> {
        &self.pools[&emotion]
    }

    pub fn iter(&self) -> impl Iterator<Item = (EmotionLabel, &BTreeSet<EmotionLabel>)> {
        self.pools.iter().map(|(&e, p)| (e, p))
    }
}

impl TryFrom<BTreeMap<EmotionLabel, BTreeSet<EmotionLabel>>> for NegativePoolTable {
    type Error = Error;

    fn try_from(pools: BTreeMap<EmotionLabel, BTreeSet<EmotionLabel>>) -> Result<Self> {
        NegativePoolTable::new(pools)
    }
}

impl From<NegativePoolTable> for BTreeMap<EmotionLabel, BTreeSet<EmotionLabel>> {
    fn from(t: NegativePoolTable) -> Self {
        t.pools
    }
}
