use rand::seq::SliceRandom;

use crate::seeded_rng;
use crate::trainer::TrainConfig;

const BATCH_STREAM: u64 = 0xba7c;

/// An epoch's visiting order split into contiguous batches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub permutation: Vec<usize>,
    pub batch_size: usize,
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn batches(&self) -> impl Iterator<Item = &[usize]> {
        let size = self.batch_size.max(1);
        let drop_last = self.drop_last;
        self.permutation
            .chunks(size)
            .filter(move |c| !drop_last || c.len() == size)
    }

    pub fn n_batches(&self) -> usize {
        self.batches().count()
    }
}

/// Seeded per-epoch permutation of `0..n` (identity when shuffling is off).
pub fn make_batches(n: usize, cfg: &TrainConfig, epoch: usize) -> BatchPlan {
    let mut permutation: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        let mut rng = seeded_rng(cfg.seed, BATCH_STREAM, epoch as u64);
        permutation.shuffle(&mut rng);
    }
    BatchPlan {
        permutation,
        batch_size: cfg.batch_size,
        drop_last: cfg.drop_last,
    }
}
