//! Stability broken down by user accuracy: users are bucketed by the base
//! model's test MRR and each bucket's mean RLS is reported per arm.

use rankstab::harness::{run_twin_experiment, ExperimentConfig};

fn main() -> rankstab::Result<()> {
    let cfg = ExperimentConfig::desk_scale().with_overrides([
        ("seeds", "[0, 1]"),
        ("finest.epochs", "10"),
        ("data.n_users", "150"),
    ])?;
    let report = run_twin_experiment(&cfg)?;
    for arm in &report.arms {
        let Some(groups) = &arm.groups else { continue };
        let buckets: Vec<String> = groups
            .mean_bucket_rls
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect();
        println!(
            "{:<8} bucket RLS (low -> high MRR) [{}], relative gap {:.4}",
            arm.arm,
            buckets.join(", "),
            groups.mean_relative_gap.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
