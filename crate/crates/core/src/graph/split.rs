use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Masks;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2 }
    }
}

/// Random disjoint cover of `0..n`. Train and val sizes are `floor(ratio·n)`;
/// the rounding residue goes to test.
pub fn split_masks(n: usize, ratios: SplitRatios, seed: u64) -> Result<Masks> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r)) || (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("split ratios must be in [0,1] and sum to 1, got {ratios:?}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // the epsilon absorbs 0.6*n landing just under an integer
    let n_train = ((train * n as f64) + 1e-9).floor() as usize;
    let n_val = ((val * n as f64) + 1e-9).floor() as usize;
    let mut masks = Masks {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    masks.train.sort_unstable();
    masks.val.sort_unstable();
    masks.test.sort_unstable();
    Ok(masks)
}
