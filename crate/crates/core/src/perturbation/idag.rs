use std::collections::{HashMap, VecDeque};

use crate::dataio::Dataset;
use crate::error::{Error, Result};

/// Interaction DAG: each interaction points at the next interaction of the
/// same user and the next interaction of the same item, in (timestamp, uid)
/// order. Node indices follow that order, so every edge goes forward.
#[derive(Debug, Clone)]
pub struct Idag {
    uids: Vec<u64>,
    succ: Vec<Vec<u32>>,
    index: HashMap<u64, u32>,
}

impl Idag {
    pub fn len(&self) -> usize {
        self.uids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uids.is_empty()
    }

    pub fn uid(&self, node: usize) -> u64 {
        self.uids[node]
    }

    pub fn node(&self, uid: u64) -> Option<usize> {
        self.index.get(&uid).map(|&n| n as usize)
    }

    pub fn successors(&self, node: usize) -> &[u32] {
        &self.succ[node]
    }

    pub fn n_edges(&self) -> usize {
        self.succ.iter().map(Vec::len).sum()
    }
}

pub fn build_idag(ds: &Dataset) -> Idag {
    let mut all = ds.interactions();
    all.sort_by_key(|i| (i.timestamp, i.uid));
    let n = all.len();
    let uids: Vec<u64> = all.iter().map(|i| i.uid).collect();
    let index = uids
        .iter()
        .enumerate()
        .map(|(k, &u)| (u, k as u32))
        .collect();
    let mut succ = vec![Vec::with_capacity(2); n];
    let mut last_user: HashMap<u32, u32> = HashMap::new();
    let mut last_item: HashMap<u32, u32> = HashMap::new();
    for (k, it) in all.iter().enumerate() {
        let k = k as u32;
        if let Some(p) = last_user.insert(it.user, k) {
            succ[p as usize].push(k);
        }
        if let Some(p) = last_item.insert(it.item, k) {
            let s = &mut succ[p as usize];
            if s.last() != Some(&k) {
                s.push(k);
            }
        }
    }
    Idag { uids, succ, index }
}

/// Number of interactions reachable from `uid` (excluding itself), by BFS.
pub fn cascading_score(g: &Idag, uid: u64) -> Result<usize> {
    let start = g.node(uid).ok_or(Error::UnknownUid(uid))?;
    let mut seen = vec![false; g.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut count = 0;
    while let Some(v) = queue.pop_front() {
        for &s in g.successors(v) {
            let s = s as usize;
            if !seen[s] {
                seen[s] = true;
                count += 1;
                queue.push_back(s);
            }
        }
    }
    Ok(count)
}

const BLOCK: usize = 4096;
const WORDS: usize = BLOCK / 64;

/// Exact descendant counts for every node, indexed like the DAG. Works one
/// block of target columns at a time so memory stays at `len * 512` bytes.
pub fn all_cascading_scores(g: &Idag) -> Vec<usize> {
    let n = g.len();
    let mut counts = vec![0usize; n];
    let mut reach = vec![0u64; n * WORDS];
    for c0 in (0..n).step_by(BLOCK) {
        let c1 = (c0 + BLOCK).min(n);
        reach[..c1 * WORDS].fill(0);
        for v in (0..c1).rev() {
            let (head, tail) = reach.split_at_mut((v + 1) * WORDS);
            let row = &mut head[v * WORDS..];
            for &s in g.successors(v) {
                let s = s as usize;
                if s >= c1 {
                    continue;
                }
                let srow = &tail[(s - v - 1) * WORDS..(s - v) * WORDS];
                for (a, b) in row.iter_mut().zip(srow) {
                    *a |= *b;
                }
                if s >= c0 {
                    let bit = s - c0;
                    row[bit / 64] |= 1u64 << (bit % 64);
                }
            }
            counts[v] += row.iter().map(|w| w.count_ones() as usize).sum::<usize>();
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::dataio::{synth_generate, Interaction, Regime, Vocab};

    fn from_triples(rows: &[(u32, u32, u64)]) -> Dataset {
        let nu = rows.iter().map(|r| r.0).max().unwrap() + 1;
        let ni = rows.iter().map(|r| r.1).max().unwrap() + 1;
        let users = Arc::new(Vocab::from_names((0..nu).map(|u| format!("u{u}"))));
        let items = Arc::new(Vocab::from_names((0..ni).map(|i| format!("i{i}"))));
        let v = rows
            .iter()
            .enumerate()
            .map(|(k, &(user, item, timestamp))| Interaction {
                uid: k as u64,
                user,
                item,
                timestamp,
            })
            .collect();
        Dataset::from_interactions(users, items, v)
    }

    #[test]
    fn hand_built_dag() {
        // u0: a@1 b@3 ; u1: b@2 c@4 ; u2: c@5
        let ds = from_triples(&[(0, 0, 1), (0, 1, 3), (1, 1, 2), (1, 2, 4), (2, 2, 5)]);
        let g = build_idag(&ds);
        assert_eq!(g.n_edges(), 4);
        let scores: Vec<usize> = (0..5).map(|u| cascading_score(&g, u).unwrap()).collect();
        assert_eq!(scores, vec![1, 0, 3, 1, 0]);
        let all = all_cascading_scores(&g);
        for u in 0..5 {
            assert_eq!(all[g.node(u).unwrap()], scores[u as usize]);
        }
    }

    #[test]
    fn repeated_item_edge_deduped() {
        let ds = from_triples(&[(0, 0, 1), (0, 0, 2)]);
        assert_eq!(build_idag(&ds).n_edges(), 1);
    }

    #[test]
    fn block_boundary() {
        let ds = synth_generate(300, 40, 5, Regime::Markov);
        assert!(ds.len() > BLOCK);
        let g = build_idag(&ds);
        let all = all_cascading_scores(&g);
        for v in (0..g.len()).step_by(97) {
            assert_eq!(all[v], cascading_score(&g, g.uid(v)).unwrap());
        }
    }

    proptest! {
        #[test]
        fn acyclic_and_matches_bfs(seed in 0u64..200) {
            let ds = synth_generate(8, 6, seed, Regime::Popularity);
            let g = build_idag(&ds);
            for v in 0..g.len() {
                for &s in g.successors(v) {
                    prop_assert!(s as usize > v);
                }
                prop_assert!(g.successors(v).len() <= 2);
            }
            let all = all_cascading_scores(&g);
            for v in 0..g.len() {
                prop_assert_eq!(all[v], cascading_score(&g, g.uid(v)).unwrap());
            }
        }
    }
}
