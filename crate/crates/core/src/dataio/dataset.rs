use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Sorted table of opaque string identifiers. The dense index of a name is
/// its rank in lexicographic order, so index order is identifier order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut names: Vec<String> = names.into_iter().map(Into::into).collect();
        names.sort();
        names.dedup();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Self { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, ix: u32) -> &str {
        &self.names[ix as usize]
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One timestamped (user, item) event. `uid` is assigned at load time and
/// survives every derived copy of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub uid: u64,
    pub user: u32,
    pub item: u32,
    pub timestamp: u64,
}

/// Identifies an instance by user and the position of its target in that
/// user's sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub user: u32,
    pub position: u32,
}

/// A (prefix, next item) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: InstanceId,
    pub prefix: Vec<u32>,
    pub target: u32,
}

/// Immutable interaction log with per-user chronological sequences.
///
/// User and item vocabularies are shared (`Arc`) by every dataset derived
/// from the same source, so item indices are comparable across splits and
/// perturbed copies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    users: Arc<Vocab>,
    items: Arc<Vocab>,
    sequences: BTreeMap<u32, Vec<Interaction>>,
    popularity: Vec<u32>,
    next_uid: u64,
}

impl Dataset {
    /// Builds a dataset from an unordered log. Each user's events are sorted
    /// by `(timestamp, uid)`.
    pub fn from_interactions(
        users: Arc<Vocab>,
        items: Arc<Vocab>,
        interactions: Vec<Interaction>,
    ) -> Self {
        let mut sequences: BTreeMap<u32, Vec<Interaction>> = BTreeMap::new();
        for it in interactions {
            sequences.entry(it.user).or_default().push(it);
        }
        for seq in sequences.values_mut() {
            seq.sort_by_key(|it| (it.timestamp, it.uid));
        }
        let next_uid = sequences
            .values()
            .flatten()
            .map(|it| it.uid + 1)
            .max()
            .unwrap_or(0);
        Self::from_sequences(users, items, sequences, next_uid)
    }

    /// Builds a dataset from already ordered per-user sequences. Sequence
    /// order is taken as authoritative; empty sequences are dropped.
    pub fn from_sequences(
        users: Arc<Vocab>,
        items: Arc<Vocab>,
        mut sequences: BTreeMap<u32, Vec<Interaction>>,
        next_uid: u64,
    ) -> Self {
        sequences.retain(|_, s| !s.is_empty());
        let mut popularity = vec![0u32; items.len()];
        let mut max_uid = 0;
        for it in sequences.values().flatten() {
            popularity[it.item as usize] += 1;
            max_uid = max_uid.max(it.uid + 1);
        }
        Self {
            users,
            items,
            sequences,
            popularity,
            next_uid: next_uid.max(max_uid),
        }
    }

    /// Empty dataset over the same vocabularies.
    pub fn empty_like(&self) -> Self {
        Self::from_sequences(
            self.users.clone(),
            self.items.clone(),
            BTreeMap::new(),
            self.next_uid,
        )
    }

    pub fn users(&self) -> &Arc<Vocab> {
        &self.users
    }

    pub fn items(&self) -> &Arc<Vocab> {
        &self.items
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Users with at least one interaction.
    pub fn n_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn len(&self) -> usize {
        self.sequences.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Smallest uid not used anywhere in this dataset's lineage so far.
    pub fn next_uid(&self) -> u64 {
        self.next_uid
    }

    pub fn sequences(&self) -> &BTreeMap<u32, Vec<Interaction>> {
        &self.sequences
    }

    pub fn sequence(&self, user: u32) -> &[Interaction] {
        self.sequences.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn user_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.sequences.keys().copied()
    }

    /// Interaction count per catalog item (zero for unseen items).
    pub fn popularity(&self) -> &[u32] {
        &self.popularity
    }

    /// Every interaction, ordered by uid.
    pub fn interactions(&self) -> Vec<Interaction> {
        let mut all: Vec<Interaction> = self.sequences.values().flatten().copied().collect();
        all.sort_by_key(|it| it.uid);
        all
    }

    /// uid -> (user, position in that user's sequence).
    pub fn locate_all(&self) -> HashMap<u64, (u32, usize)> {
        let mut out = HashMap::with_capacity(self.len());
        for (&user, seq) in &self.sequences {
            for (pos, it) in seq.iter().enumerate() {
                out.insert(it.uid, (user, pos));
            }
        }
        out
    }

    /// Content fingerprint over sequences, used to check that derived copies
    /// leave their source untouched.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.sequences.hash(&mut h);
        self.next_uid.hash(&mut h);
        h.finish()
    }
}
