use super::{base, catalog, Experiment};
use crate::manifest::RunManifest;
use crate::outcome::{Check, Outcome, Table};
use crate::Error;

pub const REPRODUCIBILITY: Experiment = Experiment {
    id: "reproducibility",
    criterion: 12,
    title: "Bitwise reproducibility",
    description: "Runs the reduced-cost variant of every other catalog experiment in thread pools of each \
                  size listed in sweep, twice with the first size, and compares SHA-256 digests of all \
                  numeric outputs.",
    tables: &[("digests", "experiment_index, threads, run, matches_reference")],
    min_ladder: 1,
    manifest: || {
        let mut m = base("reproducibility", "none", vec![1.0]);
        m.sweep = vec![1.0, 3.0];
        m
    },
    quick: |mut m| {
        m.sweep = vec![1.0, 2.0];
        m
    },
    run: run_reproducibility,
};

fn in_pool(threads: usize, m: &RunManifest) -> Result<String, Error> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Degenerate(format!("thread pool: {e}")))?;
    pool.install(|| super::run(m)).map(|o| o.digest())
}

fn run_reproducibility(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let threads: Vec<usize> = m.sweep.iter().map(|&t| t.round().max(1.0) as usize).collect();
    if threads.is_empty() {
        return Err(Error::Schema(vec!["reproducibility needs thread counts in sweep".into()]));
    }
    let mut table = Table::new("digests", &["experiment_index", "threads", "run", "matches_reference"]);
    let mut mismatches = 0usize;
    for (k, e) in catalog().iter().enumerate().filter(|(_, e)| e.id != m.experiment) {
        let quick = e.quick_manifest();
        let reference = in_pool(threads[0], &quick)?;
        let mut runs = vec![(threads[0], in_pool(threads[0], &quick)?)];
        for &t in &threads[1..] {
            runs.push((t, in_pool(t, &quick)?));
        }
        for (r, (t, d)) in runs.iter().enumerate() {
            let same = *d == reference;
            mismatches += usize::from(!same);
            table.push(vec![k as f64, *t as f64, (r + 1) as f64, f64::from(u8::from(same))]);
        }
        out.notes.push(format!("{}: {reference}", e.id));
    }
    out.tables.push(table);
    out.check(Check::at_most("digest mismatches", mismatches as f64, 0.0));
    Ok(())
}
