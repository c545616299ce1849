//! RBO, top-k Jaccard, RLS and accuracy metrics on hand-built rank lists.

use std::collections::BTreeMap;

use rankstab::dataio::InstanceId;
use rankstab::metrics::{jaccard_topk, mrr, rbo, recall_at_k, rls, Similarity, SimilarityConfig};
use rankstab::models::rank;

fn main() -> rankstab::Result<()> {
    let a = rank(&[0.9, 0.8, 0.7, 0.1, 0.0])?;
    let b = rank(&[0.8, 0.9, 0.7, 0.0, 0.1])?;
    println!("ordering a {:?}, b {:?}", a.ordering, b.ordering);
    println!("rbo(a, a) = {:.6} (= 1 - 0.9^5)", rbo(&a, &a, 0.9)?);
    println!("rbo(a, b) = {:.6}", rbo(&a, &b, 0.9)?);
    println!("jaccard@2(a, b) = {:.3}", jaccard_topk(&a, &b, 2)?);

    let cfg = SimilarityConfig {
        rbo_p: 0.9,
        jaccard_k: 2,
    };
    let id = |p| InstanceId {
        user: 0,
        position: p,
    };
    let base: BTreeMap<_, _> = [(id(1), a.clone()), (id(2), b.clone())]
        .into_iter()
        .collect();
    let twin: BTreeMap<_, _> = [(id(1), b.clone()), (id(2), b.clone())]
        .into_iter()
        .collect();
    println!("RLS-RBO = {:.6}", rls(&base, &twin, Similarity::Rbo, &cfg)?);
    println!(
        "RLS-Jaccard = {:.6}",
        rls(&base, &twin, Similarity::Jaccard, &cfg)?
    );

    let targets: BTreeMap<_, _> = [(id(1), 2u32), (id(2), 4u32)].into_iter().collect();
    println!(
        "MRR = {:.4}, Recall@10 = {:.4}",
        mrr(&base, &targets),
        recall_at_k(&base, &targets, 10)
    );
    Ok(())
}
