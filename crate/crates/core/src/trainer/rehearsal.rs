use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One training batch: indices into the recent round's data and into the history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub recent: Vec<usize>,
    pub history: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.recent.len() + self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty() && self.history.is_empty()
    }
}

/// Rehearsal batches for one epoch.
///
/// The recent data is shuffled and cut into chunks of `ceil(B/2)`; each chunk is
/// topped up with as many history examples (at most `floor(B/2)`), drawn
/// uniformly without replacement inside the batch. With no history the
/// batches hold recent examples only.
pub fn make_rehearsal_batches<R: Rng + ?Sized>(
    n_recent: usize,
    n_history: usize,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be positive");
    let recent_per_batch = batch_size.div_ceil(2).max(1);
    let history_cap = batch_size / 2;
    let mut order: Vec<usize> = (0..n_recent).collect();
    order.shuffle(rng);
    order
        .chunks(recent_per_batch)
        .map(|chunk| {
            let k = chunk.len().min(history_cap).min(n_history);
            let history = index::sample(rng, n_history, k).into_vec();
            Batch { recent: chunk.to_vec(), history }
        })
        .collect()
}
