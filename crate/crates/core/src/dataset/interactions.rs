use std::collections::HashMap;

/// One rating as read from disk, before id remapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawRating {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Default)]
pub struct SplitOptions {
    /// Items with fewer ratings than this are dropped before splitting.
    pub min_item_interactions: usize,
}

/// Implicit-feedback dataset with a leave-last-two split.
///
/// Item ids run from the most to the least frequent item in the training
/// split, ties broken by ascending external id. User ids follow the same rule
/// so that user tables can be tiered by activity too.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<Interaction>,
    /// Second-to-last action of every user with at least three actions.
    pub validation: Vec<(usize, usize)>,
    /// Last action of every user with at least three actions.
    pub test: Vec<(usize, usize)>,
    pub item_frequency: Vec<u32>,
    pub user_frequency: Vec<u32>,
    pub item_external_ids: Vec<u32>,
    pub user_external_ids: Vec<u32>,
}

impl InteractionDataset {
    /// Builds the split from raw ratings. Every rating is a positive; each
    /// user's actions are ordered by timestamp (input order breaks ties).
    pub fn from_ratings(ratings: &[RawRating], options: &SplitOptions) -> Self {
        let mut item_totals: HashMap<u32, usize> = HashMap::new();
        for r in ratings {
            *item_totals.entry(r.item).or_default() += 1;
        }
        let kept: Vec<&RawRating> = ratings
            .iter()
            .filter(|r| item_totals[&r.item] >= options.min_item_interactions)
            .collect();

        let mut by_user: HashMap<u32, Vec<&RawRating>> = HashMap::new();
        for &r in &kept {
            by_user.entry(r.user).or_default().push(r);
        }
        let mut user_ext: Vec<u32> = by_user.keys().copied().collect();
        user_ext.sort_unstable();

        let mut train_raw: Vec<&RawRating> = Vec::new();
        let mut held: Vec<(&RawRating, &RawRating)> = Vec::new();
        for u in &user_ext {
            let actions = by_user.get_mut(u).expect("present");
            actions.sort_by_key(|r| r.timestamp);
            if actions.len() >= 3 {
                let k = actions.len();
                train_raw.extend(&actions[..k - 2]);
                held.push((actions[k - 2], actions[k - 1]));
            } else {
                train_raw.extend(actions.iter());
            }
        }

        let mut item_counts: HashMap<u32, u32> = kept.iter().map(|r| (r.item, 0)).collect();
        let mut user_counts: HashMap<u32, u32> = user_ext.iter().map(|&u| (u, 0)).collect();
        for r in &train_raw {
            *item_counts.get_mut(&r.item).expect("present") += 1;
            *user_counts.get_mut(&r.user).expect("present") += 1;
        }
        let (item_external_ids, item_frequency, item_index) = frequency_order(&item_counts);
        let (user_external_ids, user_frequency, user_index) = frequency_order(&user_counts);

        let train = train_raw
            .iter()
            .map(|r| Interaction {
                user: user_index[&r.user],
                item: item_index[&r.item],
                timestamp: r.timestamp,
            })
            .collect();
        let mut validation: Vec<(usize, usize)> = held
            .iter()
            .map(|(v, _)| (user_index[&v.user], item_index[&v.item]))
            .collect();
        let mut test: Vec<(usize, usize)> = held
            .iter()
            .map(|(_, t)| (user_index[&t.user], item_index[&t.item]))
            .collect();
        validation.sort_unstable();
        test.sort_unstable();

        InteractionDataset {
            num_users: user_external_ids.len(),
            num_items: item_external_ids.len(),
            train,
            validation,
            test,
            item_frequency,
            user_frequency,
            item_external_ids,
            user_external_ids,
        }
    }

    pub fn num_interactions(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    /// Fraction of the user-item matrix that is unobserved.
    pub fn sparsity(&self) -> f64 {
        let cells = (self.num_users * self.num_items) as f64;
        if cells == 0.0 {
            return 1.0;
        }
        1.0 - self.num_interactions() as f64 / cells
    }

    /// Sorted, de-duplicated training items of every user.
    pub fn user_train_items(&self) -> Vec<Vec<usize>> {
        let mut items = vec![Vec::new(); self.num_users];
        for it in &self.train {
            items[it.user].push(it.item);
        }
        for v in &mut items {
            v.sort_unstable();
            v.dedup();
        }
        items
    }

    /// Internal id of external item `ext`, if present.
    pub fn item_id(&self, ext: u32) -> Option<usize> {
        self.item_external_ids.iter().position(|&e| e == ext)
    }
}

/// Orders keys by descending count, then ascending key.
fn frequency_order(counts: &HashMap<u32, u32>) -> (Vec<u32>, Vec<u32>, HashMap<u32, usize>) {
    let mut entries: Vec<(u32, u32)> = counts.iter().map(|(&k, &c)| (k, c)).collect();
    entries.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let index = entries.iter().enumerate().map(|(i, &(k, _))| (k, i)).collect();
    let (ids, freqs) = entries.into_iter().unzip();
    (ids, freqs, index)
}
