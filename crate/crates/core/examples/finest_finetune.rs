//! FINEST fine-tuning of a trained base model: references, pseudo-perturbed
//! CE and the rank-preserving regularizer, with a per-epoch log.

use std::collections::BTreeSet;

use rankstab::dataio::{build_instances, synth_generate, Regime, SplitConfig};
use rankstab::finest::{
    finetune_with_references, generate_references, reg_loss_scores, reg_loss_total, FinestConfig,
};
use rankstab::models::{init_model, train_base, ModelConfig};

fn main() -> rankstab::Result<()> {
    println!(
        "hinge example: {:.3}",
        reg_loss_scores(&[0.5, 0.7, 0.1, 0.6], &[0, 1, 2, 3], 0.1, 0.1)
    );

    let ds = synth_generate(120, 50, 2, Regime::Markov);
    let split = SplitConfig {
        max_seq_len: 20,
        ..Default::default()
    };
    let inst = build_instances(&ds, &split);
    let mcfg = ModelConfig {
        embed_dim: 16,
        learning_rate: 0.005,
        max_epochs: 10,
        max_seq_len: 20,
        batch_size: 16,
        ..Default::default()
    };
    let (base, _) = train_base(&init_model(&mcfg, ds.n_items())?, &inst, &mcfg)?;

    let cfg = FinestConfig {
        top_k: 10,
        epochs: 5,
        learning_rate: 0.002,
        batch_size: 16,
        seed: 3,
        ..Default::default()
    };
    let store = generate_references(&base, &inst, cfg.top_k)?;
    println!("{} reference lists of {} items", store.len(), 2 * store.k());

    let (start, _) = reg_loss_total(&base, &inst, &BTreeSet::new(), &store, &cfg)?;
    let (tuned, log) = finetune_with_references(&base, &ds, &store, &cfg)?;
    let (end, _) = reg_loss_total(&tuned, &inst, &BTreeSet::new(), &store, &cfg)?;
    for e in &log.epochs {
        println!(
            "epoch {}  ce {:.4}  reg {:.4}  edits {}  excluded {}",
            e.epoch, e.ce_loss, e.reg_loss, e.n_edits, e.n_excluded
        );
    }
    println!("regularizer over all instances: {start:.2} -> {end:.2}");
    log.write_csv(std::io::stdout())?;
    Ok(())
}
