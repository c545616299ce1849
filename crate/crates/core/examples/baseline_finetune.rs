//! Comparator fine-tuning: random-pool perturbation and sign-gradient input
//! noise.

use rankstab::baselines::{acae_losses, finetune_baseline, BaselineConfig, BaselineVariant};
use rankstab::dataio::{build_instances, synth_generate, Regime, SplitConfig};
use rankstab::models::{init_model, loss_ce, train_base, ModelConfig};

fn main() -> rankstab::Result<()> {
    let ds = synth_generate(100, 40, 4, Regime::Markov);
    let split = SplitConfig {
        max_seq_len: 20,
        ..Default::default()
    };
    let inst = build_instances(&ds, &split);
    let mcfg = ModelConfig {
        embed_dim: 16,
        learning_rate: 0.005,
        max_epochs: 8,
        max_seq_len: 20,
        batch_size: 16,
        ..Default::default()
    };
    let (base, _) = train_base(&init_model(&mcfg, ds.n_items())?, &inst, &mcfg)?;
    println!("base CE {:.4}", loss_ce(&base, &inst)?.0);

    for variant in [
        BaselineVariant::Random,
        BaselineVariant::EarliestRandom,
        BaselineVariant::LatestRandom,
        BaselineVariant::AcaeNoise,
    ] {
        let cfg = BaselineConfig {
            variant,
            epochs: 3,
            epsilon: 0.05,
            batch_size: 16,
            learning_rate: 0.002,
            ..Default::default()
        };
        let (m, log) = finetune_baseline(&base, &ds, &cfg)?;
        println!(
            "{:<16} last epoch ce {:.4}, CE on clean data {:.4}",
            variant.name(),
            log.epochs.last().map_or(f64::NAN, |e| e.ce_loss),
            loss_ce(&m, &inst)?.0
        );
    }

    let (clean, noised, _) = acae_losses(&base, &inst[..64], 0.05)?;
    println!("one batch: clean CE {clean:.4}, sign-noised CE {noised:.4}");
    Ok(())
}
