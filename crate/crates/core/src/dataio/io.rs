use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Interaction, Vocab};
use super::split::SplitConfig;
use crate::error::{Error, Result};

/// Supported on-disk interaction formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// `user<TAB>item<TAB>timestamp`, one event per line.
    #[default]
    Tsv,
}

/// Sidecar written next to a persisted dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: String,
    pub seed: Option<u64>,
    pub regime: Option<String>,
    pub min_user_interactions: Option<usize>,
    pub split: Option<SplitConfig>,
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
}

/// `data/log.tsv` -> `data/log.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

/// Reads an interaction log. uids are assigned in file order.
pub fn load_interactions(path: &Path, format: Format) -> Result<Dataset> {
    let Format::Tsv = format;
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut raw = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err(line_no, "empty user or item id".into()));
        }
        let ts: u64 = fields[2]
            .trim()
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad timestamp `{}`: {e}", fields[2])))?;
        raw.push((fields[0], fields[1], ts));
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let users = Arc::new(Vocab::from_names(raw.iter().map(|r| r.0)));
    let items = Arc::new(Vocab::from_names(raw.iter().map(|r| r.1)));
    let interactions = raw
        .iter()
        .enumerate()
        .map(|(uid, (u, i, ts))| Interaction {
            uid: uid as u64,
            user: users.get(u).expect("user in vocab"),
            item: items.get(i).expect("item in vocab"),
            timestamp: *ts,
        })
        .collect();
    Ok(Dataset::from_interactions(users, items, interactions))
}

/// Writes the dataset in uid order, and the manifest sidecar when given.
pub fn save_interactions(
    ds: &Dataset,
    path: &Path,
    manifest: Option<&DatasetManifest>,
) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for it in ds.interactions() {
        writeln!(
            out,
            "{}\t{}\t{}",
            ds.users().name(it.user),
            ds.items().name(it.item),
            it.timestamp
        )?;
    }
    out.flush()?;
    if let Some(m) = manifest {
        let m = DatasetManifest {
            n_users: ds.n_users(),
            n_items: ds.n_items(),
            n_interactions: ds.len(),
            ..m.clone()
        };
        fs::write(manifest_path(path), serde_json::to_string_pretty(&m)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> PathBuf {
        let p = dir.path().join("log.tsv");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_line_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "u1\ta\t1\nu1\tb\t2\nu2\ta\t5\n");
        let ds = load_interactions(&p, Format::Tsv).unwrap();
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.n_items(), 2);
        let a = ds.items().get("a").unwrap();
        let b = ds.items().get("b").unwrap();
        assert_eq!(ds.popularity()[a as usize], 2);
        assert_eq!(ds.popularity()[b as usize], 1);
    }

    #[test]
    fn wrong_delimiter_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "u1,a,1\n");
        match load_interactions(&p, Format::Tsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_timestamp_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "u1\ta\t1\nu1\tb\t-4\n");
        match load_interactions(&p, Format::Tsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "");
        assert!(matches!(
            load_interactions(&p, Format::Tsv),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn ties_broken_by_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "u\tb\t3\nu\ta\t3\nu\tc\t1\n");
        let ds = load_interactions(&p, Format::Tsv).unwrap();
        let seq: Vec<u64> = ds.sequence(0).iter().map(|it| it.uid).collect();
        assert_eq!(seq, vec![2, 0, 1]);
    }

    #[test]
    fn manifest_sidecar_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "u1\ta\t1\nu1\tb\t2\n");
        let ds = load_interactions(&p, Format::Tsv).unwrap();
        let out = dir.path().join("copy.tsv");
        let m = DatasetManifest {
            source: "test".into(),
            seed: Some(3),
            ..Default::default()
        };
        save_interactions(&ds, &out, Some(&m)).unwrap();
        let back: DatasetManifest =
            serde_json::from_str(&fs::read_to_string(manifest_path(&out)).unwrap()).unwrap();
        assert_eq!(back.seed, Some(3));
        assert_eq!(back.n_interactions, 2);
    }
}
