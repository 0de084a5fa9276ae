//! Interaction data: raw per-user item lists, dense id remapping and the
//! train / validation / test split used by every other module.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Per-user item lists keyed by raw (file) ids, in first-seen user order.
///
/// Repeated users are merged and duplicate items collapse to one; item order
/// inside a list is the order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawInteractions {
    entries: Vec<(u64, Vec<u64>)>,
    index: BTreeMap<u64, usize>,
    members: Vec<BTreeSet<u64>>,
}

impl RawInteractions {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `items` to `user`, creating the user if unseen (an empty item
    /// list still registers the user).
    pub fn insert(&mut self, user: u64, items: impl IntoIterator<Item = u64>) {
        let slot = match self.index.get(&user) {
            Some(&slot) => slot,
            None => {
                let slot = self.entries.len();
                self.index.insert(user, slot);
                self.entries.push((user, Vec::new()));
                self.members.push(BTreeSet::new());
                slot
            }
        };
        for item in items {
            if self.members[slot].insert(item) {
                self.entries[slot].1.push(item);
            }
        }
    }

    pub fn get(&self, user: u64) -> Option<&[u64]> {
        self.index.get(&user).map(|&s| self.entries[s].1.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[u64])> {
        self.entries.iter().map(|(u, items)| (*u, items.as_slice()))
    }

    pub fn num_users(&self) -> usize {
        self.entries.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.entries.iter().map(|(_, items)| items.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Raw id to dense id mapping. Dense ids are positions in these vectors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    users: Vec<u64>,
    items: Vec<u64>,
    user_lookup: BTreeMap<u64, usize>,
    item_lookup: BTreeMap<u64, usize>,
}

impl IdMap {
    pub fn identity(num_users: usize, num_items: usize) -> Self {
        let mut map = Self::default();
        for u in 0..num_users {
            map.intern_user(u as u64);
        }
        for i in 0..num_items {
            map.intern_item(i as u64);
        }
        map
    }

    fn intern_user(&mut self, raw: u64) -> usize {
        intern(&mut self.users, &mut self.user_lookup, raw)
    }

    fn intern_item(&mut self, raw: u64) -> usize {
        intern(&mut self.items, &mut self.item_lookup, raw)
    }

    pub fn user(&self, raw: u64) -> Option<usize> {
        self.user_lookup.get(&raw).copied()
    }

    pub fn item(&self, raw: u64) -> Option<usize> {
        self.item_lookup.get(&raw).copied()
    }

    /// `(raw, dense)` pairs in dense order.
    pub fn user_pairs(&self) -> impl Iterator<Item = (u64, usize)> + '_ {
        self.users.iter().enumerate().map(|(d, &r)| (r, d))
    }

    pub fn item_pairs(&self) -> impl Iterator<Item = (u64, usize)> + '_ {
        self.items.iter().enumerate().map(|(d, &r)| (r, d))
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }
}

fn intern(dense_to_raw: &mut Vec<u64>, lookup: &mut BTreeMap<u64, usize>, raw: u64) -> usize {
    *lookup.entry(raw).or_insert_with(|| {
        dense_to_raw.push(raw);
        dense_to_raw.len() - 1
    })
}

/// Counts of what `build_dataset` dropped or moved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitSummary {
    /// Test users that never appear in the train file.
    pub dropped_test_users: usize,
    /// Test interactions removed because the user was unknown.
    pub dropped_unknown_user_entries: usize,
    /// Test interactions on items never seen in training (cold-start items).
    pub dropped_cold_start_entries: usize,
    /// Test interactions that duplicated a train interaction.
    pub dropped_overlap_entries: usize,
    pub validation_interactions: usize,
}

/// Dense user/item id spaces with per-user sorted, duplicate-free item lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    train: Vec<Vec<usize>>,
    validation: Vec<Vec<usize>>,
    test: Vec<Vec<usize>>,
    num_train_interactions: usize,
}

impl InteractionDataset {
    /// Builds a dataset from dense per-user lists, sorting and deduplicating
    /// them and checking every invariant.
    pub fn from_lists(
        num_users: usize,
        num_items: usize,
        train: Vec<Vec<usize>>,
        validation: Vec<Vec<usize>>,
        test: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let normalize = |mut lists: Vec<Vec<usize>>, what: &str| -> Result<Vec<Vec<usize>>> {
            if lists.is_empty() {
                lists = vec![Vec::new(); num_users];
            }
            if lists.len() != num_users {
                return Err(Error::DimensionMismatch {
                    expected: format!("{num_users} {what} lists"),
                    actual: format!("{}", lists.len()),
                });
            }
            for list in &mut lists {
                list.sort_unstable();
                list.dedup();
                if let Some(&last) = list.last() {
                    if last >= num_items {
                        return Err(Error::OutOfRange {
                            what: "item",
                            id: last,
                            limit: num_items,
                        });
                    }
                }
            }
            Ok(lists)
        };
        let train = normalize(train, "train")?;
        let validation = normalize(validation, "validation")?;
        let test = normalize(test, "test")?;
        for u in 0..num_users {
            if intersects(&train[u], &test[u]) || intersects(&train[u], &validation[u]) {
                return Err(Error::InvalidConfig(format!(
                    "user {u}: train overlaps validation or test"
                )));
            }
        }
        let num_train_interactions = train.iter().map(Vec::len).sum();
        if num_train_interactions == 0 {
            return Err(Error::EmptyTrainSet);
        }
        Ok(Self {
            num_users,
            num_items,
            train,
            validation,
            test,
            num_train_interactions,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// `M + N`, the number of graph nodes.
    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn train(&self, user: usize) -> &[usize] {
        &self.train[user]
    }

    pub fn validation(&self, user: usize) -> &[usize] {
        &self.validation[user]
    }

    pub fn test(&self, user: usize) -> &[usize] {
        &self.test[user]
    }

    pub fn train_lists(&self) -> &[Vec<usize>] {
        &self.train
    }

    pub fn validation_lists(&self) -> &[Vec<usize>] {
        &self.validation
    }

    pub fn test_lists(&self) -> &[Vec<usize>] {
        &self.test
    }

    pub fn num_train_interactions(&self) -> usize {
        self.num_train_interactions
    }

    pub fn num_validation_interactions(&self) -> usize {
        self.validation.iter().map(Vec::len).sum()
    }

    pub fn num_test_interactions(&self) -> usize {
        self.test.iter().map(Vec::len).sum()
    }

    pub fn is_train_interaction(&self, user: usize, item: usize) -> bool {
        self.train[user].binary_search(&item).is_ok()
    }

    /// Number of training users per item (`|N_i|`).
    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_items];
        for items in &self.train {
            for &i in items {
                deg[i] += 1;
            }
        }
        deg
    }

    /// Training users of each item, ascending.
    pub fn item_users(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.num_items];
        for (u, items) in self.train.iter().enumerate() {
            for &i in items {
                lists[i].push(u);
            }
        }
        lists
    }

    /// All interactions (train, validation and test) over `M * N`.
    pub fn density(&self) -> f64 {
        let total = self.num_train_interactions
            + self.num_validation_interactions()
            + self.num_test_interactions();
        total as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    /// Sub-dataset restricted to `users` (renumbered in the given order) and
    /// the items they touch in training (renumbered in ascending order).
    /// Validation and test entries on items outside that set are dropped.
    pub fn induced_by_users(&self, users: &[usize]) -> Result<Self> {
        let mut item_ids = BTreeMap::new();
        for &u in users {
            if u >= self.num_users {
                return Err(Error::OutOfRange {
                    what: "user",
                    id: u,
                    limit: self.num_users,
                });
            }
            for &i in &self.train[u] {
                item_ids.insert(i, 0usize);
            }
        }
        for (dense, slot) in item_ids.values_mut().enumerate() {
            *slot = dense;
        }
        let remap = |list: &[usize]| -> Vec<usize> {
            list.iter()
                .filter_map(|i| item_ids.get(i).copied())
                .collect()
        };
        let train = users.iter().map(|&u| remap(&self.train[u])).collect();
        let validation = users.iter().map(|&u| remap(&self.validation[u])).collect();
        let test = users.iter().map(|&u| remap(&self.test[u])).collect();
        Self::from_lists(users.len(), item_ids.len(), train, validation, test)
    }
}

fn intersects(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Output of [`build_dataset`].
#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub dataset: InteractionDataset,
    pub ids: IdMap,
    pub summary: SplitSummary,
}

/// Number of train items a user with `n` train items gives up to validation.
/// Users keep at least one train item.
pub fn validation_count(n: usize, fraction: f64) -> usize {
    if n < 2 || fraction <= 0.0 {
        return 0;
    }
    // The epsilon absorbs products such as 0.2 * 15 = 3.0000000000000004.
    let k = libm::ceil(fraction * n as f64 - 1e-9).max(0.0) as usize;
    k.min(n - 1)
}

/// Remaps raw ids to dense ids (first-seen order in `train`), holds out a
/// seeded per-user validation fraction of train and filters the test set.
pub fn build_dataset(
    train: &RawInteractions,
    test: &RawInteractions,
    validation_fraction: f64,
    seed: u64,
) -> Result<BuiltDataset> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::InvalidValidationFraction(validation_fraction));
    }
    if train.num_interactions() == 0 {
        return Err(Error::EmptyTrainSet);
    }

    let mut ids = IdMap::default();
    let mut train_lists = Vec::with_capacity(train.num_users());
    for (raw_user, raw_items) in train.iter() {
        let u = ids.intern_user(raw_user);
        debug_assert_eq!(u, train_lists.len());
        let mut items: Vec<usize> = raw_items.iter().map(|&i| ids.intern_item(i)).collect();
        items.sort_unstable();
        train_lists.push(items);
    }
    let num_users = ids.num_users();
    let num_items = ids.num_items();

    let mut summary = SplitSummary::default();
    let mut test_lists = vec![Vec::new(); num_users];
    for (raw_user, raw_items) in test.iter() {
        let Some(u) = ids.user(raw_user) else {
            if !raw_items.is_empty() {
                summary.dropped_test_users += 1;
                summary.dropped_unknown_user_entries += raw_items.len();
            }
            continue;
        };
        for &raw_item in raw_items {
            match ids.item(raw_item) {
                None => summary.dropped_cold_start_entries += 1,
                Some(i) if train_lists[u].binary_search(&i).is_ok() => {
                    summary.dropped_overlap_entries += 1
                }
                Some(i) => test_lists[u].push(i),
            }
        }
        test_lists[u].sort_unstable();
    }
    if summary.dropped_test_users > 0 {
        log::warn!(
            "dropped {} test users ({} interactions) absent from training",
            summary.dropped_test_users,
            summary.dropped_unknown_user_entries
        );
    }
    if summary.dropped_cold_start_entries > 0 {
        log::warn!(
            "dropped {} test interactions on cold-start items",
            summary.dropped_cold_start_entries
        );
    }
    if summary.dropped_overlap_entries > 0 {
        log::warn!(
            "dropped {} test interactions already present in training",
            summary.dropped_overlap_entries
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut validation_lists = vec![Vec::new(); num_users];
    for (items, held_out) in train_lists.iter_mut().zip(validation_lists.iter_mut()) {
        let k = validation_count(items.len(), validation_fraction);
        if k == 0 {
            continue;
        }
        let (chosen, _) = items.partial_shuffle(&mut rng, k);
        held_out.extend_from_slice(chosen);
        held_out.sort_unstable();
        items.sort_unstable();
        items.retain(|i| held_out.binary_search(i).is_err());
        summary.validation_interactions += k;
    }

    let dataset = InteractionDataset::from_lists(
        num_users,
        num_items,
        train_lists,
        validation_lists,
        test_lists,
    )?;
    Ok(BuiltDataset {
        dataset,
        ids,
        summary,
    })
}
