//! Twin-retraining stability experiment: no defense vs FINEST under a
//! cascading-score deletion attack. Extra `key=value` arguments override
//! the config, e.g. `seeds=[0,1,2] finest.epochs=10`.

use rankstab::harness::{run_twin_experiment, write_aggregate_csv, write_report, ExperimentConfig};

fn main() -> rankstab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut pairs = vec![
        ("seeds", "[0, 1]"),
        ("finest.epochs", "10"),
        ("data.n_users", "150"),
    ];
    pairs.extend(args.iter().filter_map(|a| a.split_once('=')));
    let cfg = ExperimentConfig::desk_scale().with_overrides(pairs)?;

    let report = run_twin_experiment(&cfg)?;
    for arm in &report.arms {
        println!(
            "{:<8} RLS-RBO {:.4}  RLS-Jaccard {:.4}  MRR {:.4}  Recall@10 {:.4}  p {:?}",
            arm.arm,
            arm.mean.rls_rbo.unwrap_or(f64::NAN),
            arm.mean.rls_jaccard.unwrap_or(f64::NAN),
            arm.mean.mrr.unwrap_or(f64::NAN),
            arm.mean.recall_at_10.unwrap_or(f64::NAN),
            arm.p_value_rls_rbo,
        );
    }
    let path = std::env::temp_dir().join("rankstab-twin.json");
    write_report(&report, &path)?;
    write_aggregate_csv(&[report], std::io::stdout())?;
    println!("report: {}", path.display());
    Ok(())
}
