//! Generate a synthetic interaction log, split it chronologically and write
//! it as TSV with a manifest sidecar.
//!
//! ```text
//! cargo run --example synthetic_data -- /tmp/markov.tsv
//! ```

use std::path::PathBuf;

use rankstab::dataio::{
    build_instances, build_test_instances, chronological_split, load_interactions, manifest_path,
    save_interactions, synth_generate, DatasetManifest, Format, Regime, SplitConfig,
};

fn main() -> rankstab::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("rankstab-markov.tsv"));

    for regime in [Regime::Markov, Regime::Popularity] {
        let ds = synth_generate(300, 100, 0, regime);
        let pop = ds.popularity();
        println!(
            "{regime:?}: {} users, {} items, {} interactions, item counts {}..{}",
            ds.n_users(),
            ds.n_items(),
            ds.len(),
            pop.iter().min().unwrap(),
            pop.iter().max().unwrap(),
        );
    }

    let ds = synth_generate(300, 100, 0, Regime::Markov);
    let split = SplitConfig::default();
    let (train, test) = chronological_split(&ds, &split)?;
    let train_inst = build_instances(&train, &split);
    let test_inst = build_test_instances(&train, &test, &split);
    println!(
        "split: {} train / {} test interactions, {} train / {} test instances",
        train.len(),
        test.len(),
        train_inst.len(),
        test_inst.len()
    );

    let manifest = DatasetManifest {
        source: "synthetic".into(),
        seed: Some(0),
        regime: Some("markov".into()),
        ..Default::default()
    };
    save_interactions(&ds, &out, Some(&manifest))?;
    let back = load_interactions(&out, Format::Tsv)?;
    assert_eq!(back.len(), ds.len());
    println!(
        "wrote {} and {}",
        out.display(),
        manifest_path(&out).display()
    );
    Ok(())
}
