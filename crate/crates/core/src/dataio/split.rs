use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Instance, InstanceId, Interaction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub min_user_interactions: usize,
    pub max_seq_len: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            min_user_interactions: 10,
            max_seq_len: 50,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0,1), got {}",
                self.train_fraction
            )));
        }
        if self.min_user_interactions < 2 {
            return Err(Error::Config("min_user_interactions must be >= 2".into()));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of a user's `m` interactions that go to training.
    pub fn train_len(&self, m: usize) -> usize {
        // The epsilon absorbs products such as 0.29 * 100 = 28.999999999999996.
        ((self.train_fraction * m as f64) + 1e-9).floor() as usize
    }
}

/// Keeps users with at least `k` interactions.
pub fn filter_min_interactions(ds: &Dataset, k: usize) -> Dataset {
    let kept: BTreeMap<u32, Vec<Interaction>> = ds
        .sequences()
        .iter()
        .filter(|(_, s)| s.len() >= k)
        .map(|(&u, s)| (u, s.clone()))
        .collect();
    Dataset::from_sequences(ds.users().clone(), ds.items().clone(), kept, ds.next_uid())
}

/// Per user, the first `floor(train_fraction * m)` interactions go to train
/// and the rest to test. Users with fewer than two interactions contribute
/// nothing to test.
pub fn chronological_split(ds: &Dataset, cfg: &SplitConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut train = BTreeMap::new();
    let mut test = BTreeMap::new();
    for (&user, seq) in ds.sequences() {
        if seq.len() < 2 {
            train.insert(user, seq.clone());
            continue;
        }
        let n = cfg.train_len(seq.len());
        train.insert(user, seq[..n].to_vec());
        test.insert(user, seq[n..].to_vec());
    }
    let mk = |s| Dataset::from_sequences(ds.users().clone(), ds.items().clone(), s, ds.next_uid());
    Ok((mk(train), mk(test)))
}

fn window(items: &[u32], end: usize, max_len: usize) -> Vec<u32> {
    let start = end.saturating_sub(max_len);
    items[start..end].to_vec()
}

/// One instance per user per position `t >= 1`, with the prefix cut to the
/// most recent `max_seq_len` items. Output is ordered by (user, position).
pub fn build_instances(ds: &Dataset, cfg: &SplitConfig) -> Vec<Instance> {
    let mut out = Vec::new();
    for (&user, seq) in ds.sequences() {
        let items: Vec<u32> = seq.iter().map(|it| it.item).collect();
        for t in 1..items.len() {
            out.push(Instance {
                id: InstanceId {
                    user,
                    position: t as u32,
                },
                prefix: window(&items, t, cfg.max_seq_len),
                target: items[t],
            });
        }
    }
    out
}

/// Test instances: every test interaction becomes a target, and its prefix
/// runs through the user's training history as well as earlier test items.
/// Positions are counted over the concatenated sequence.
pub fn build_test_instances(train: &Dataset, test: &Dataset, cfg: &SplitConfig) -> Vec<Instance> {
    let mut out = Vec::new();
    for (&user, tseq) in test.sequences() {
        let mut items: Vec<u32> = train.sequence(user).iter().map(|it| it.item).collect();
        let first = items.len();
        items.extend(tseq.iter().map(|it| it.item));
        for t in first.max(1)..items.len() {
            out.push(Instance {
                id: InstanceId {
                    user,
                    position: t as u32,
                },
                prefix: window(&items, t, cfg.max_seq_len),
                target: items[t],
            });
        }
    }
    out
}
