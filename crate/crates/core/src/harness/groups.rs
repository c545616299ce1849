use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::InstanceId;
use crate::error::{Error, Result};
use crate::metrics::shifted_mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBucket {
    pub index: usize,
    pub users: Vec<u32>,
    pub mrr_low: f64,
    pub mrr_high: f64,
    pub mean_rls: f64,
}

/// Users bucketed by accuracy, lowest-MRR bucket first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTable {
    pub buckets: Vec<GroupBucket>,
    /// `(top - bottom) / bottom` of the bucket RLS means; `None` when the
    /// bottom bucket's RLS is zero.
    pub relative_gap: Option<f64>,
}

/// Splits users into `quantiles` equal-size buckets by `user_mrr` (ties by
/// user index) and averages the per-instance similarities in each.
pub fn group_stability_report(
    user_mrr: &BTreeMap<u32, f64>,
    similarities: &BTreeMap<InstanceId, f64>,
    quantiles: usize,
) -> Result<GroupTable> {
    let mut users: Vec<(u32, f64)> = user_mrr.iter().map(|(&u, &m)| (u, m)).collect();
    if quantiles == 0 || users.len() < quantiles {
        return Err(Error::TooFewUsers {
            got: users.len(),
            need: quantiles.max(1),
        });
    }
    users.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut per_user: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (id, &s) in similarities {
        per_user.entry(id.user).or_default().push(s);
    }
    let n = users.len();
    let buckets: Vec<GroupBucket> = (0..quantiles)
        .map(|q| {
            let chunk = &users[q * n / quantiles..(q + 1) * n / quantiles];
            let sims: Vec<f64> = chunk
                .iter()
                .flat_map(|(u, _)| per_user.get(u).into_iter().flatten().copied())
                .collect();
            GroupBucket {
                index: q,
                users: chunk.iter().map(|c| c.0).collect(),
                mrr_low: chunk.first().map_or(0.0, |c| c.1),
                mrr_high: chunk.last().map_or(0.0, |c| c.1),
                mean_rls: if sims.is_empty() {
                    0.0
                } else {
                    shifted_mean(&sims)
                },
            }
        })
        .collect();
    let bottom = buckets[0].mean_rls;
    let top = buckets[quantiles - 1].mean_rls;
    let relative_gap = (bottom != 0.0).then(|| (top - bottom) / bottom);
    Ok(GroupTable {
        buckets,
        relative_gap,
    })
}
