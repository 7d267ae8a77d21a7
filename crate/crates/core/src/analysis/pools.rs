use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::gap::CrossModalSimilarityMatrix;
use crate::corpus::{EmotionLabel, NegativePoolTable, EMOTION_COUNT};
use crate::error::{Error, Result};

/// Largest exclusion count that leaves every pool non-empty.
pub const MAX_EXCLUDED: usize = EMOTION_COUNT - 2;

/// Pools that drop, per image emotion, the `k` text emotions with the highest
/// off-diagonal similarity. Ties go to the lower emotion code.
pub fn derive_negative_pools(m: &CrossModalSimilarityMatrix, k: usize) -> Result<NegativePoolTable> {
    if k > MAX_EXCLUDED {
        return Err(Error::contract(format!(
            "k = {k} would empty a pool (at most {MAX_EXCLUDED})"
        )));
    }
    let mut pools = BTreeMap::new();
    for i in EmotionLabel::ALL {
        let mut others: Vec<EmotionLabel> = EmotionLabel::ALL.into_iter().filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| m.get(i, b).total_cmp(&m.get(i, a)).then(a.cmp(&b)));
        pools.insert(i, others[k..].iter().copied().collect::<BTreeSet<_>>());
    }
    NegativePoolTable::new(pools)
}

/// One emotion whose pools differ between two tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolDiscrepancy {
    pub emotion: EmotionLabel,
    pub derived: BTreeSet<EmotionLabel>,
    pub reference: BTreeSet<EmotionLabel>,
    /// In `reference` but not in `derived`.
    pub only_reference: BTreeSet<EmotionLabel>,
    /// In `derived` but not in `reference`.
    pub only_derived: BTreeSet<EmotionLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolComparison {
    pub matching: Vec<EmotionLabel>,
    pub discrepant: Vec<PoolDiscrepancy>,
}

pub fn compare_pools(derived: &NegativePoolTable, reference: &NegativePoolTable) -> PoolComparison {
    let mut matching = Vec::new();
    let mut discrepant = Vec::new();
    for e in EmotionLabel::ALL {
        let d = derived.pool(e);
        let r = reference.pool(e);
        if d == r {
            matching.push(e);
        } else {
            discrepant.push(PoolDiscrepancy {
                emotion: e,
                derived: d.clone(),
                reference: r.clone(),
                only_reference: r.difference(d).copied().collect(),
                only_derived: d.difference(r).copied().collect(),
            });
        }
    }
    PoolComparison {
        matching,
        discrepant,
    }
}
