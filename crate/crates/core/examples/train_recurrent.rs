//! Train a recurrent next-item model, save a checkpoint, reload it and
//! check that scores survive the round trip.

use rankstab::dataio::{
    build_instances, build_test_instances, chronological_split, synth_generate, Regime, SplitConfig,
};
use rankstab::models::{
    init_model, load_checkpoint, rank, save_checkpoint, score, train_base, Arch, ModelConfig,
};

fn main() -> rankstab::Result<()> {
    let ds = synth_generate(150, 60, 1, Regime::Markov);
    let split = SplitConfig {
        max_seq_len: 20,
        ..Default::default()
    };
    let (train, test) = chronological_split(&ds, &split)?;
    let train_inst = build_instances(&train, &split);
    let test_inst = build_test_instances(&train, &test, &split);

    let cfg = ModelConfig {
        arch: Arch::Recurrent,
        embed_dim: 24,
        learning_rate: 0.005,
        max_epochs: 15,
        max_seq_len: 20,
        batch_size: 16,
        seed: 7,
        ..Default::default()
    };
    let theta0 = init_model(&cfg, ds.n_items())?;
    let (model, log) = train_base(&theta0, &train_inst, &cfg)?;
    for e in &log.epochs {
        println!(
            "epoch {:>2}  loss {:.4}  val mrr {:.4}",
            e.epoch,
            e.train_loss,
            e.val_mrr.unwrap_or(0.0)
        );
    }
    println!(
        "kept epoch {} (stopped early: {})",
        log.best_epoch, log.stopped_early
    );

    let path = std::env::temp_dir().join("rankstab-recurrent.ckpt");
    save_checkpoint(&model, log.best_epoch, &path)?;
    let (restored, header) = load_checkpoint(&path)?;
    let probe = &test_inst[0];
    assert_eq!(
        score(&model, &probe.prefix)?,
        score(&restored, &probe.prefix)?
    );
    let top = rank(&score(&restored, &probe.prefix)?)?;
    println!(
        "checkpoint {} ({} params); top-5 for first test prefix {:?}, target {}",
        path.display(),
        header.n_params,
        top.top(5),
        probe.target
    );
    Ok(())
}
