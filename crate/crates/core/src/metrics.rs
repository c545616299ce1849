//! Rank-list similarity (RBO, top-k Jaccard), rank-list stability and
//! next-item accuracy metrics.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataio::InstanceId;
use crate::error::{Error, Result};
use crate::models::RankList;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub rbo_p: f64,
    pub jaccard_k: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            rbo_p: 0.9,
            jaccard_k: 10,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self, n_items: usize) -> Result<()> {
        if !(self.rbo_p > 0.0 && self.rbo_p < 1.0) {
            return Err(Error::Config(format!(
                "rbo_p must lie in (0,1), got {}",
                self.rbo_p
            )));
        }
        if self.jaccard_k == 0 || self.jaccard_k > n_items {
            return Err(Error::Config(format!(
                "jaccard_k must lie in [1, {n_items}], got {}",
                self.jaccard_k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Rbo,
    Jaccard,
}

fn is_permutation(order: &[u32], seen: &mut [bool]) -> bool {
    seen.fill(false);
    for &i in order {
        match seen.get_mut(i as usize) {
            Some(s) if !*s => *s = true,
            _ => return false,
        }
    }
    true
}

/// Rank-biased overlap truncated at the full catalog depth:
/// `(1-p) * sum_{d=1..n} p^(d-1) |A[:d] ∩ B[:d]| / d`.
///
/// Evaluated as `(1 - p^n) - (1-p) * sum p^(d-1) (d - overlap_d) / d`, which
/// is the same sum but returns exactly `1 - p^n` for identical lists.
/// Overlaps are tracked incrementally with membership bitmaps.
pub fn rbo(a: &RankList, b: &RankList, p: f64) -> Result<f64> {
    rbo_orderings(&a.ordering, &b.ordering, p)
}

pub fn rbo_orderings(a: &[u32], b: &[u32], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("rbo p must lie in (0,1), got {p}")));
    }
    let n = a.len();
    let mut in_a = vec![false; n];
    let mut in_b = vec![false; n];
    if b.len() != n || !is_permutation(a, &mut in_a) || !is_permutation(b, &mut in_b) {
        return Err(Error::CatalogMismatch);
    }
    in_a.fill(false);
    in_b.fill(false);
    let mut overlap = 0usize;
    let mut weight = 1.0;
    let mut deficit = 0.0;
    for d in 0..n {
        let (x, y) = (a[d] as usize, b[d] as usize);
        if x == y {
            overlap += 1;
        } else {
            overlap += in_b[x] as usize + in_a[y] as usize;
        }
        in_a[x] = true;
        in_b[y] = true;
        let depth = d + 1;
        if overlap < depth {
            deficit += weight * (depth - overlap) as f64 / depth as f64;
        }
        weight *= p;
    }
    Ok((1.0 - p.powf(n as f64)) - (1.0 - p) * deficit)
}

/// `|top_k(A) ∩ top_k(B)| / |top_k(A) ∪ top_k(B)|`.
pub fn jaccard_topk(a: &RankList, b: &RankList, k: usize) -> Result<f64> {
    jaccard_orderings(&a.ordering, &b.ordering, k)
}

pub fn jaccard_orderings(a: &[u32], b: &[u32], k: usize) -> Result<f64> {
    if k == 0 || k > a.len() || k > b.len() {
        return Err(Error::Config(format!("jaccard k={k} outside catalog")));
    }
    let n = a.len().max(b.len());
    let mut mark = vec![false; n];
    for &i in &a[..k] {
        mark[i as usize] = true;
    }
    let shared = b[..k].iter().filter(|&&i| mark[i as usize]).count();
    Ok(shared as f64 / (2 * k - shared) as f64)
}

/// Arithmetic mean computed around the first element, so a constant input
/// returns that constant exactly.
pub fn shifted_mean(values: &[f64]) -> f64 {
    match values.first() {
        None => f64::NAN,
        Some(&x0) => x0 + values.iter().map(|v| v - x0).sum::<f64>() / values.len() as f64,
    }
}

fn similarity(a: &RankList, b: &RankList, sim: Similarity, cfg: &SimilarityConfig) -> Result<f64> {
    match sim {
        Similarity::Rbo => rbo(a, b, cfg.rbo_p),
        Similarity::Jaccard => jaccard_topk(a, b, cfg.jaccard_k),
    }
}

/// Similarity of paired rank lists, per instance.
pub fn rls_per_instance(
    base: &BTreeMap<InstanceId, RankList>,
    twin: &BTreeMap<InstanceId, RankList>,
    sim: Similarity,
    cfg: &SimilarityConfig,
) -> Result<BTreeMap<InstanceId, f64>> {
    if base.len() != twin.len() || base.keys().zip(twin.keys()).any(|(a, b)| a != b) {
        return Err(Error::KeyMismatch);
    }
    base.iter()
        .zip(twin.values())
        .map(|((id, a), b)| Ok((*id, similarity(a, b, sim, cfg)?)))
        .collect()
}

/// Rank-list stability: mean similarity over all paired instances.
pub fn rls(
    base: &BTreeMap<InstanceId, RankList>,
    twin: &BTreeMap<InstanceId, RankList>,
    sim: Similarity,
    cfg: &SimilarityConfig,
) -> Result<f64> {
    let per = rls_per_instance(base, twin, sim, cfg)?;
    Ok(shifted_mean(&per.values().copied().collect::<Vec<_>>()))
}

/// 1-based rank of `target` under the tie rule of [`crate::models::rank`].
pub fn target_rank(scores: &[f64], target: u32) -> usize {
    let t = target as usize;
    let st = scores[t];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > st || (s == st && i < t))
        .count()
}

pub fn mrr(lists: &BTreeMap<InstanceId, RankList>, targets: &BTreeMap<InstanceId, u32>) -> f64 {
    let rr: Vec<f64> = lists
        .iter()
        .filter_map(|(id, l)| targets.get(id).and_then(|&t| l.rank_of(t)))
        .map(|r| 1.0 / r as f64)
        .collect();
    if rr.is_empty() {
        0.0
    } else {
        rr.iter().sum::<f64>() / rr.len() as f64
    }
}

pub fn recall_at_k(
    lists: &BTreeMap<InstanceId, RankList>,
    targets: &BTreeMap<InstanceId, u32>,
    k: usize,
) -> f64 {
    let hits: Vec<bool> = lists
        .iter()
        .filter_map(|(id, l)| targets.get(id).map(|&t| l.top(k).contains(&t)))
        .collect();
    if hits.is_empty() {
        0.0
    } else {
        hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
    }
}

/// One metric value with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_instances: usize,
    pub config: serde_json::Value,
}

/// One row of the long-format CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run: String,
    pub arm: String,
    pub seed: Option<u64>,
    pub metric: String,
    pub value: f64,
}

pub fn write_long_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn list(order: &[u32]) -> RankList {
        RankList {
            ordering: order.to_vec(),
            scores: vec![0.0; order.len()],
        }
    }

    #[test]
    fn rbo_identical_is_geometric_closure() {
        let a = list(&[0, 1, 2, 3, 4]);
        assert_eq!(rbo(&a, &a, 0.9).unwrap(), 1.0 - 0.9f64.powf(5.0));
    }

    #[test]
    fn rbo_hand_example() {
        let a = list(&[0, 1, 2]);
        let b = list(&[1, 0, 2]);
        let v = rbo(&a, &b, 0.9).unwrap();
        assert!((v - 0.171).abs() < 1e-12, "{v}");
    }

    #[test]
    fn rbo_rejects_mismatch() {
        assert!(matches!(
            rbo(&list(&[0, 1, 2]), &list(&[0, 1]), 0.9),
            Err(Error::CatalogMismatch)
        ));
        assert!(matches!(
            rbo(&list(&[0, 1, 2]), &list(&[0, 1, 1]), 0.9),
            Err(Error::CatalogMismatch)
        ));
    }

    #[test]
    fn rbo_reversal_below_identity() {
        let a: Vec<u32> = (0..200).collect();
        let r: Vec<u32> = (0..200).rev().collect();
        let same = rbo_orderings(&a, &a, 0.9).unwrap();
        let rev = rbo_orderings(&a, &r, 0.9).unwrap();
        assert!(rev < same);
    }

    #[test]
    fn jaccard_cases() {
        let a: Vec<u32> = (0..30).collect();
        assert_eq!(jaccard_orderings(&a, &a, 10).unwrap(), 1.0);
        let b: Vec<u32> = (10..30).chain(0..10).collect();
        assert_eq!(jaccard_orderings(&a, &b, 10).unwrap(), 0.0);
        let c: Vec<u32> = (5..15).chain(0..5).chain(15..30).collect();
        assert!((jaccard_orderings(&a, &c, 10).unwrap() - 5.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn rls_mean_and_identity() {
        let id = |u| InstanceId {
            user: u,
            position: 1,
        };
        let a = list(&[0, 1, 2, 3]);
        let base: BTreeMap<_, _> = [(id(0), a.clone()), (id(1), a.clone())].into();
        let cfg = SimilarityConfig {
            rbo_p: 0.9,
            jaccard_k: 2,
        };
        assert_eq!(
            rls(&base, &base, Similarity::Rbo, &cfg).unwrap(),
            1.0 - 0.9f64.powf(4.0)
        );
        assert_eq!(rls(&base, &base, Similarity::Jaccard, &cfg).unwrap(), 1.0);

        // top-2 {0,1} vs {0,2} -> 1/3 ; {0,1} vs {1,0} -> 1
        let twin: BTreeMap<_, _> =
            [(id(0), list(&[0, 2, 1, 3])), (id(1), list(&[1, 0, 2, 3]))].into();
        let v = rls(&base, &twin, Similarity::Jaccard, &cfg).unwrap();
        assert!((v - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);

        let short: BTreeMap<_, _> = [(id(0), a)].into();
        assert!(matches!(
            rls(&base, &short, Similarity::Rbo, &cfg),
            Err(Error::KeyMismatch)
        ));
    }

    #[test]
    fn accuracy_metrics() {
        let id = |u| InstanceId {
            user: u,
            position: 1,
        };
        let lists: BTreeMap<_, _> = [(id(0), list(&[3, 1, 2, 0, 4]))].into();
        let t: BTreeMap<_, _> = [(id(0), 0u32)].into();
        assert_eq!(mrr(&lists, &t), 0.25);
        assert_eq!(recall_at_k(&lists, &t, 3), 0.0);
        assert_eq!(recall_at_k(&lists, &t, 4), 1.0);
        let t1: BTreeMap<_, _> = [(id(0), 3u32)].into();
        assert_eq!(mrr(&lists, &t1), 1.0);
        assert_eq!(recall_at_k(&lists, &t1, 10.min(5)), 1.0);
    }

    #[test]
    fn target_rank_matches_rank_list() {
        let s = [0.3, 0.9, 0.3, 0.1];
        let r = crate::models::rank(&s).unwrap();
        for t in 0..4u32 {
            assert_eq!(target_rank(&s, t), r.rank_of(t).unwrap());
        }
    }

    #[test]
    fn csv_long_format() {
        let rows = vec![MetricRow {
            run: "r".into(),
            arm: "none".into(),
            seed: Some(1),
            metric: "rls_rbo".into(),
            value: 0.5,
        }];
        let mut buf = Vec::new();
        write_long_csv(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("run,arm,seed,metric,value\n"));
        assert!(s.contains("r,none,1,rls_rbo,0.5"));
    }

    fn perm(n: usize) -> impl Strategy<Value = Vec<u32>> {
        Just((0..n as u32).collect::<Vec<_>>()).prop_shuffle()
    }

    proptest! {
        #[test]
        fn rbo_symmetric((a, b) in (2usize..80).prop_flat_map(|n| (perm(n), perm(n))), p in 0.05f64..0.99) {
            let x = rbo_orderings(&a, &b, p).unwrap();
            let y = rbo_orderings(&b, &a, p).unwrap();
            prop_assert!((x - y).abs() < 1e-14);
            prop_assert!(x >= -1e-15 && x <= 1.0 - p.powf(a.len() as f64) + 1e-15);
        }

        #[test]
        fn jaccard_takes_lattice_values((a, b) in (10usize..60).prop_flat_map(|n| (perm(n), perm(n))), k in 1usize..10) {
            let v = jaccard_orderings(&a, &b, k).unwrap();
            let ok = (0..=k).any(|m| v == m as f64 / (2 * k - m) as f64);
            prop_assert!(ok);
        }

        #[test]
        fn rls_is_linear_under_concatenation(xs in proptest::collection::vec(0.0f64..1.0, 1..30), ys in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            let all: Vec<f64> = xs.iter().chain(&ys).copied().collect();
            let joint = shifted_mean(&all);
            let parts = (shifted_mean(&xs) * xs.len() as f64 + shifted_mean(&ys) * ys.len() as f64) / all.len() as f64;
            prop_assert!((joint - parts).abs() < 1e-12);
        }
    }
}
