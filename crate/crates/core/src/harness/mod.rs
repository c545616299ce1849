//! Twin-retraining experiments: every arm is trained on the original split
//! and, from the same initial parameters, on an attacked copy; the two rank
//! lists per test instance are then compared.

mod config;
mod groups;
mod run;
mod stats;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use config::{
    AttackConfig, AttackEdit, DatasetSpec, DefenseKind, ExperimentConfig, Selector, TwinMode,
};
pub use groups::{group_stability_report, GroupBucket, GroupTable};
pub use run::{
    ablation_arms, build_attack, prepare_data, run_ablation, run_arms, run_sweep,
    run_twin_experiment, Arm, ArmReport, Defense, ExperimentReport, GroupSummary, MetricSet,
    PreparedData, SeedResult, SweepKnob, SweepPoint, REPORT_SCHEMA_VERSION,
};
pub use stats::ttest_one_tailed;

use crate::error::Result;
use crate::metrics::write_long_csv;

pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Long-format CSV of every per-seed metric across `reports`.
pub fn write_aggregate_csv<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let rows: Vec<_> = reports
        .iter()
        .flat_map(ExperimentReport::metric_rows)
        .collect();
    write_long_csv(&rows, out)
}
