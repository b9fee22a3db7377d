use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Disjoint train/validation/test node sets covering every node. Each list is sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitMasks {
    /// Checks disjointness, coverage of `0..n` and non-empty train/val/test sets.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut owner = vec![0u8; n];
        for (tag, set) in [(1u8, &self.train), (2, &self.val), (3, &self.test)] {
            for &i in set {
                if i >= n {
                    return Err(Error::Integrity(format!("split references node {i} >= {n}")));
                }
                if owner[i] != 0 {
                    return Err(Error::Integrity(format!("node {i} appears in two splits")));
                }
                owner[i] = tag;
            }
        }
        if let Some(i) = owner.iter().position(|&t| t == 0) {
            return Err(Error::Integrity(format!("node {i} is in no split")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

/// Per-class stratified split. Each class is shuffled and cut at
/// `round(train · n_c)` and `round((train + val) · n_c)`. Classes with fewer than
/// three nodes go entirely to training, with a warning.
pub fn make_split(g: &Graph, ratios: SplitRatios, seed: u64) -> Result<SplitMasks> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r))
        || ((train + val + test) - 1.0).abs() > 1e-9
    {
        return Err(Error::Argument(format!(
            "split ratios {train}/{val}/{test} must be in [0, 1] and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = vec![Vec::new(); g.num_classes()];
    for (i, &y) in g.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut masks = SplitMasks {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut nodes) in by_class.into_iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        if nodes.len() < 3 {
            log::warn!(
                "class {class} has only {} node(s); assigning all of them to train",
                nodes.len()
            );
            masks.train.extend(nodes);
            continue;
        }
        nodes.shuffle(&mut rng);
        let nc = nodes.len() as f64;
        let cut_train = (train * nc).round() as usize;
        let cut_val = (((train + val) * nc).round() as usize).max(cut_train);
        masks.train.extend_from_slice(&nodes[..cut_train]);
        masks.val.extend_from_slice(&nodes[cut_train..cut_val]);
        masks.test.extend_from_slice(&nodes[cut_val..]);
    }
    masks.train.sort_unstable();
    masks.val.sort_unstable();
    masks.test.sort_unstable();
    Ok(masks)
}
