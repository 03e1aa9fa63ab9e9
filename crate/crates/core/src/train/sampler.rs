use rand::Rng;

use crate::dataset::InteractionDataset;

/// Uniform negatives over the items a user has not interacted with in train.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    num_items: usize,
    seen: Vec<Vec<usize>>,
}

impl NegativeSampler {
    pub fn new(dataset: &InteractionDataset) -> Self {
        NegativeSampler {
            num_items: dataset.num_items,
            seen: dataset.user_train_items(),
        }
    }

    /// `seen` must hold each user's sorted training items.
    pub fn from_seen(num_items: usize, seen: Vec<Vec<usize>>) -> Self {
        NegativeSampler { num_items, seen }
    }

    pub fn seen(&self, user: usize) -> &[usize] {
        &self.seen[user]
    }

    /// A uniformly drawn unseen item, or `None` when the user has seen every
    /// item.
    pub fn sample<R: Rng + ?Sized>(&self, user: usize, rng: &mut R) -> Option<usize> {
        let seen = &self.seen[user];
        let free = self.num_items - seen.len();
        if free == 0 {
            return None;
        }
        if seen.len() * 2 <= self.num_items {
            loop {
                let item = rng.random_range(0..self.num_items);
                if seen.binary_search(&item).is_err() {
                    return Some(item);
                }
            }
        }
        // Dense users: pick the k-th unseen item directly.
        let mut k = rng.random_range(0..free);
        let mut prev = 0;
        for &s in seen {
            let gap = s - prev;
            if k < gap {
                return Some(prev + k);
            }
            k -= gap;
            prev = s + 1;
        }
        Some(prev + k)
    }
}
