//! Random dev/test/train partitions of the human-labeled data.
//!
//! Dev and test are drawn from expert-labeled items only. Each split is
//! sampled independently, so an item may land in the test set of more than
//! one split.

use anyhow::{ensure, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use solidarity_core::{LabeledDataset, Provenance};

use crate::run::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub dev: usize,
    pub test: usize,
    /// Number of random splits.
    pub n: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { dev: 170, test: 170, n: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub expert_total: usize,
    pub dev: usize,
    pub test: usize,
    pub expert_train: usize,
    pub other_train: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split: usize,
    pub seed: u64,
    pub counts: SplitCounts,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    /// Remaining expert items followed by all non-expert items.
    pub train: Vec<String>,
}

/// Draws `sizes.n` manifests. Split `i` uses ChaCha8 stream `i` of `seed`.
pub fn make_splits(expert_ids: &[String], other_ids: &[String], sizes: SplitSizes, seed: u64) -> Result<Vec<SplitManifest>> {
    if sizes.n == 0 {
        return Err(usage("number of splits must be at least 1"));
    }
    if sizes.dev + sizes.test > expert_ids.len() {
        anyhow::bail!(
            "insufficient expert items: dev {} + test {} exceeds {} expert-labeled items",
            sizes.dev,
            sizes.test,
            expert_ids.len()
        );
    }
    let mut base: Vec<String> = expert_ids.to_vec();
    base.sort();
    base.dedup();
    ensure!(base.len() == expert_ids.len(), "duplicate expert ids");
    let mut other: Vec<String> = other_ids.to_vec();
    other.sort();

    let mut out = Vec::with_capacity(sizes.n);
    for i in 0..sizes.n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut ids = base.clone();
        ids.shuffle(&mut rng);
        let mut dev = ids[..sizes.dev].to_vec();
        let mut test = ids[sizes.dev..sizes.dev + sizes.test].to_vec();
        let mut train = ids[sizes.dev + sizes.test..].to_vec();
        dev.sort();
        test.sort();
        train.sort();
        let counts = SplitCounts {
            expert_total: base.len(),
            dev: dev.len(),
            test: test.len(),
            expert_train: train.len(),
            other_train: other.len(),
        };
        ensure!(
            counts.expert_train == counts.expert_total - sizes.dev - sizes.test,
            "expert train size {} != {} - {} - {}",
            counts.expert_train,
            counts.expert_total,
            sizes.dev,
            sizes.test
        );
        train.extend(other.iter().cloned());
        out.push(SplitManifest {
            split: i,
            seed,
            counts,
            dev,
            test,
            train,
        });
    }
    Ok(out)
}

/// Splits a human-labeled dataset by provenance and draws the manifests.
pub fn splits_for(human: &LabeledDataset, sizes: SplitSizes, seed: u64) -> Result<Vec<SplitManifest>> {
    let expert: Vec<String> = human
        .iter()
        .filter(|e| e.provenance == Provenance::Expert)
        .map(|e| e.id().to_string())
        .collect();
    let other: Vec<String> = human
        .iter()
        .filter(|e| e.provenance != Provenance::Expert)
        .map(|e| e.id().to_string())
        .collect();
    make_splits(&expert, &other, sizes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn expert_train_arithmetic() {
        let m = make_splits(&ids("e", 919), &ids("c", 1040), SplitSizes::default(), 1).unwrap();
        assert_eq!(m.len(), 3);
        for s in &m {
            assert_eq!(s.counts.expert_train, 579);
            assert_eq!(s.train.len(), 579 + 1040);
        }
    }

    #[test]
    fn partitions_are_disjoint_and_seeded() {
        let experts = ids("e", 50);
        let a = make_splits(&experts, &ids("c", 5), SplitSizes { dev: 10, test: 10, n: 2 }, 9).unwrap();
        let b = make_splits(&experts, &ids("c", 5), SplitSizes { dev: 10, test: 10, n: 2 }, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].test, a[1].test);
        for s in &a {
            let mut all: Vec<&String> = s.dev.iter().chain(&s.test).chain(&s.train).collect();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 55);
            assert!(s.dev.iter().chain(&s.test).all(|id| id.starts_with('e')));
        }
    }

    #[test]
    fn too_few_experts() {
        assert!(make_splits(&ids("e", 10), &[], SplitSizes { dev: 6, test: 5, n: 1 }, 0).is_err());
    }
}
