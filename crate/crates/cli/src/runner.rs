//! Batch execution and persistence of results.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::experiments;
use crate::manifest::RunManifest;
use crate::outcome::{Outcome, Table};
use crate::Error;

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let io = |e: std::io::Error| Error::Io(path.display().to_string(), e);
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// CSV with a leading comment line carrying the manifest hash.
pub fn table_csv(t: &Table, manifest_hash: &str) -> String {
    let mut s = format!("# manifest_sha256={manifest_hash}\n{}\n", t.columns.join(","));
    for r in &t.rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

#[derive(Serialize)]
struct Summary<'a> {
    pass: bool,
    digest: String,
    #[serde(flatten)]
    outcome: &'a Outcome,
}

/// Writes manifest.toml (with a JSON copy), summary.json and one CSV per table into
/// `<root>/<experiment>/`; returns that directory.
pub fn write_outputs(m: &RunManifest, o: &Outcome, root: &Path) -> Result<PathBuf, Error> {
    let dir = root.join(&o.experiment);
    write_atomic(&dir.join("manifest.toml"), m.to_toml().as_bytes())?;
    write_atomic(&dir.join("manifest.json"), m.to_json().as_bytes())?;
    for t in &o.tables {
        write_atomic(&dir.join(format!("{}.csv", t.name)), table_csv(t, &o.manifest_hash).as_bytes())?;
    }
    let summary = Summary { pass: o.pass(), digest: o.digest(), outcome: o };
    write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(dir)
}

/// Runs a batch of manifests concurrently; results come back in input order.
pub fn run_batch(manifests: &[RunManifest]) -> Vec<Result<Outcome, Error>> {
    manifests.par_iter().map(experiments::run).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_embeds_hash_and_round_trips_values() {
        let mut t = Table::new("x", &["h", "err"]);
        t.push(vec![0.125, 1.0 / 3.0]);
        let s = table_csv(&t, "abc");
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# manifest_sha256=abc");
        assert_eq!(lines[1], "h,err");
        let vals: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals, vec![0.125, 1.0 / 3.0]);
    }

    #[test]
    fn outputs_are_written_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let m = experiments::find("bargmann").unwrap().default_manifest();
        let mut o = Outcome::new("bargmann", 2, m.hash());
        o.tables.push(Table::new("probes", &["h"]));
        let out = write_outputs(&m, &o, dir.path()).unwrap();
        assert_eq!(RunManifest::load(&out.join("manifest.toml")).unwrap(), m);
        assert_eq!(RunManifest::load(&out.join("manifest.json")).unwrap(), m);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(json["manifest_hash"], m.hash());
        assert!(out.join("probes.csv").exists());
        let leftovers = std::fs::read_dir(&out).unwrap().count();
        assert_eq!(leftovers, 4);
    }
}
