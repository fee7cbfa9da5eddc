use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PatchSet;
use crate::error::{Error, Result};

/// Number of folds in the cross-validation protocol.
pub const FOLDS: usize = 5;

/// Disjoint train/validation/test index lists into a [`PatchSet`], each
/// sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub fold: Option<usize>,
}

impl SplitPlan {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(train, validation, test)` sizes for a class of `n` samples: half to
/// test, then half of the remainder to train, each rounded half-to-even.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let test = (n as f64 / 2.0).round_ties_even() as usize;
    let train = ((n - test) as f64 / 2.0).round_ties_even() as usize;
    (train, n - test - train, test)
}

pub fn stratified_split(patches: &PatchSet, seed: u64, fold: Option<usize>) -> Result<SplitPlan> {
    split_labels(patches.labels(), patches.class_count(), seed, fold)
}

/// Per-class seeded shuffle, then test/train/validation slices taken in that
/// order. A fold `f` in `1..=5` first rotates each shuffled class list left
/// by `⌊(f−1)·n/5⌋`, so the test slice moves around the list across folds.
pub fn split_labels(labels: &[u16], classes: usize, seed: u64, fold: Option<usize>) -> Result<SplitPlan> {
    if let Some(f) = fold {
        if !(1..=FOLDS).contains(&f) {
            return Err(Error::Parameter(format!("fold must lie in 1..={FOLDS}, got {f}")));
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 || l as usize > classes {
            return Err(Error::Index(format!("patch {i} has label {l} outside 1..={classes}")));
        }
        members[l as usize - 1].push(i);
    }
    if let Some((c, m)) = members.iter().enumerate().find(|(_, m)| m.len() < 4) {
        return Err(Error::Stratification { class: c + 1, count: m.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = SplitPlan { train: Vec::new(), validation: Vec::new(), test: Vec::new(), seed, fold };
    for mut m in members {
        m.shuffle(&mut rng);
        let n = m.len();
        if let Some(f) = fold {
            m.rotate_left((f - 1) * n / FOLDS);
        }
        let (train, _, test) = split_counts(n);
        plan.test.extend_from_slice(&m[..test]);
        plan.train.extend_from_slice(&m[test..test + train]);
        plan.validation.extend_from_slice(&m[test + train..]);
    }
    plan.train.sort_unstable();
    plan.validation.sort_unstable();
    plan.test.sort_unstable();
    Ok(plan)
}
