//! FINEST ablation: drop the simulation, the regularizer, or either hinge
//! term, and compare stability with the full method.

use rankstab::harness::{run_ablation, ExperimentConfig};

fn main() -> rankstab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut pairs = vec![
        ("seeds", "[0, 1]"),
        ("finest.epochs", "10"),
        ("data.n_users", "150"),
    ];
    pairs.extend(args.iter().filter_map(|a| a.split_once('=')));
    let cfg = ExperimentConfig::desk_scale().with_overrides(pairs)?;
    let report = run_ablation(&cfg)?;
    for arm in &report.arms {
        println!(
            "{:<18} RLS-RBO {:.4}  MRR {:.4}",
            arm.arm,
            arm.mean.rls_rbo.unwrap_or(f64::NAN),
            arm.mean.mrr.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
