//! One-knob sweeps of FINEST sharing base models and attack plans.
//!
//! ```text
//! cargo run --release --example hyperparameter_sweep -- lambda 0,0.5,1,2
//! ```

use rankstab::harness::{run_sweep, ExperimentConfig, SweepKnob};

fn main() -> rankstab::Result<()> {
    let mut args = std::env::args().skip(1);
    let knob: SweepKnob = args
        .next()
        .as_deref()
        .unwrap_or("epochs")
        .parse()
        .map_err(rankstab::Error::Config)?;
    let values: Vec<f64> = args
        .next()
        .unwrap_or_else(|| "0,5,10".into())
        .split(',')
        .map(|v| {
            v.parse()
                .map_err(|e| rankstab::Error::Config(format!("{v}: {e}")))
        })
        .collect::<rankstab::Result<_>>()?;
    let cfg = ExperimentConfig::desk_scale()
        .with_overrides([("seeds", "[0, 1]"), ("data.n_users", "150")])?;
    for r in run_sweep(&cfg, knob, &values)? {
        let sweep = r.sweep.as_ref().unwrap();
        let f = r.arm("finest").unwrap();
        let n = r.arm("none").unwrap();
        println!(
            "{}={:<6} FINEST RLS-RBO {:.4} (none {:.4})  MRR {:.4}",
            sweep.knob,
            sweep.value,
            f.mean.rls_rbo.unwrap_or(f64::NAN),
            n.mean.rls_rbo.unwrap_or(f64::NAN),
            f.mean.mrr.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
