use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ImageRecord;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FoldError {
    #[error("need at least {k} accepted records, got {found}")]
    TooFewRecords { k: usize, found: usize },
    #[error("invalid fold parameters: {0}")]
    InvalidParams(String),
}

/// K-fold partition of accepted image ids with a per-fold validation
/// subset carved from that fold's training portion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub k: usize,
    pub val_frac: f64,
    /// Test fold of every accepted id.
    pub assignments: BTreeMap<String, usize>,
    /// Validation ids per fold, drawn from the other folds.
    pub validation: Vec<Vec<String>>,
}

/// Ids of one fold, each list in canonical (sorted) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles the sorted accepted ids with `seed` and deals them round-robin
/// into `k` folds. Rejected records never appear.
pub fn plan_folds(records: &[ImageRecord], k: usize, val_frac: f64, seed: u64) -> Result<FoldPlan, FoldError> {
    if k < 2 {
        return Err(FoldError::InvalidParams(format!("k = {k} must be at least 2")));
    }
    if !(0.0..1.0).contains(&val_frac) {
        return Err(FoldError::InvalidParams(format!("val_frac = {val_frac} must lie in [0, 1)")));
    }
    let mut ids: Vec<String> = records
        .iter()
        .filter(|r| r.is_accepted())
        .map(|r| r.image_id.clone())
        .collect();
    if ids.len() < k {
        return Err(FoldError::TooFewRecords { k, found: ids.len() });
    }
    ids.sort();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let assignments: BTreeMap<String, usize> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i % k)).collect();
    let validation = (0..k)
        .map(|f| {
            let mut rest: Vec<String> = assignments
                .iter()
                .filter(|(_, &fold)| fold != f)
                .map(|(id, _)| id.clone())
                .collect();
            let mut fold_rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(f as u64 + 1)));
            rest.shuffle(&mut fold_rng);
            let n_val = (val_frac * rest.len() as f64).round() as usize;
            let mut val: Vec<String> = rest.into_iter().take(n_val).collect();
            val.sort();
            val
        })
        .collect();
    Ok(FoldPlan {
        seed,
        k,
        val_frac,
        assignments,
        validation,
    })
}

impl FoldPlan {
    pub fn split(&self, fold: usize) -> FoldSplit {
        assert!(fold < self.k, "fold {fold} out of range");
        let val = self.validation[fold].clone();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (id, &f) in &self.assignments {
            if f == fold {
                test.push(id.clone());
            } else if val.binary_search(id).is_err() {
                train.push(id.clone());
            }
        }
        FoldSplit { fold, train, val, test }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serialises")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
