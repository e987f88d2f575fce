use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semiclab::experiments::{self, Experiment};
use semiclab::{runner, Error, Outcome, RunManifest};

#[derive(Parser)]
#[command(name = "semiclab", version, about = "Semiclassical numerical laboratory")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SEMICLAB_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a manifest file or a catalog id.
    Run {
        /// Path to a TOML manifest, or the id of a catalog experiment.
        target: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every catalog experiment with its default manifest.
    RunAll {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// List catalog experiments.
    List,
    /// Describe an experiment and print its default manifest.
    Describe { id: String },
    /// Check a manifest without running it.
    Validate { manifest: PathBuf },
}

#[derive(Args, Clone)]
struct Overrides {
    /// Comma-separated h values replacing the manifest ladder.
    #[arg(long, value_delimiter = ',')]
    h_ladder: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u32>,
    /// Output root; results go to <out>/<experiment>/.
    #[arg(long, env = "SEMICLAB_OUT")]
    out: Option<PathBuf>,
    /// Use the reduced-cost variant of catalog manifests.
    #[arg(long)]
    quick: bool,
}

impl Overrides {
    fn apply(&self, mut m: RunManifest) -> RunManifest {
        if let Some(l) = &self.h_ladder {
            m.h_ladder = l.clone();
        }
        if let Some(s) = self.seed {
            m.seed = s;
        }
        if let Some(o) = &self.out {
            m.out = o.clone();
        }
        m
    }

    fn catalog_manifest(&self, e: &Experiment) -> RunManifest {
        self.apply(if self.quick { e.quick_manifest() } else { e.default_manifest() })
    }
}

fn lookup(id: &str) -> Result<&'static Experiment, Error> {
    experiments::find(id).ok_or_else(|| {
        let ids: Vec<&str> = experiments::catalog().iter().map(|e| e.id).collect();
        Error::Schema(vec![format!("unknown experiment '{id}' (known: {})", ids.join(", "))])
    })
}

fn resolve(target: &str, o: &Overrides) -> Result<RunManifest, Error> {
    let path = Path::new(target);
    if path.exists() {
        Ok(o.apply(RunManifest::load(path)?))
    } else {
        lookup(target).map(|e| o.catalog_manifest(e))
    }
}

fn report(m: &RunManifest, o: &Outcome) -> Result<(), Error> {
    let dir = runner::write_outputs(m, o, &m.out)?;
    println!("{}  -> {}", o.summary_line(), dir.display());
    for c in &o.checks {
        println!("    [{}] {}: {:.4e} ({})", if c.pass { "ok" } else { "FAIL" }, c.name, c.value, c.condition);
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<bool, Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Degenerate(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run { target, overrides } => {
            let m = resolve(&target, &overrides)?;
            let o = experiments::run(&m)?;
            report(&m, &o)?;
            Ok(o.pass())
        }
        Command::RunAll { overrides } => {
            let manifests: Vec<RunManifest> =
                experiments::catalog().iter().map(|e| overrides.catalog_manifest(e)).collect();
            let mut all = true;
            for (m, r) in manifests.iter().zip(runner::run_batch(&manifests)) {
                match r {
                    Ok(o) => {
                        report(m, &o)?;
                        all &= o.pass();
                    }
                    Err(e) => {
                        if let Error::Schema(_) = e {
                            return Err(e);
                        }
                        eprintln!("ERROR {}: {e}", m.experiment);
                        all = false;
                    }
                }
            }
            Ok(all)
        }
        Command::List => {
            for e in experiments::catalog() {
                println!("{:<22} criterion {:>2}  {}", e.id, e.criterion, e.title);
            }
            Ok(true)
        }
        Command::Describe { id } => {
            let e = lookup(&id)?;
            println!("{} (criterion {}): {}\n\n{}\n", e.id, e.criterion, e.title, e.description);
            for (t, cols) in e.tables {
                println!("  {t}.csv: {cols}");
            }
            println!("\n{}", e.default_manifest().to_toml());
            Ok(true)
        }
        Command::Validate { manifest } => {
            let m = RunManifest::load(&manifest)?;
            let errs = experiments::validate(&m);
            if !errs.is_empty() {
                return Err(Error::Schema(errs));
            }
            println!("ok {} sha256={}", m.experiment, m.hash());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
