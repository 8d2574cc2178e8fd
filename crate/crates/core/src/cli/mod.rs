//! Command-line experiment runner: `run`, `table` and `verify`.

pub mod config;
pub mod run;
pub mod table;
pub mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use self::config::{ConfigFile, ExperimentConfig, Overrides, Preset};
pub use self::run::{run_experiment, CellRecord, CellStatus, RunManifest};
pub use self::table::{check_table, load_reference, ResultTable};
pub use self::verify::{run_suites, SuiteResult};

use crate::flow::Scheme;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHECK: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "dualflow", version, about = "Dual gradient flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (noise level, seed) cell of an experiment.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Output root.
        #[arg(long, env = "DUALFLOW_OUT")]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Run this single seed instead of the configured ones.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scheme: Option<Scheme>,
        #[arg(long)]
        dt: Option<f64>,
        /// Compare the resulting table against a reference CSV.
        #[arg(long)]
        check: Option<PathBuf>,
    },
    /// Format the results of a finished run.
    Table {
        /// Run directory or manifest file; defaults to the output root.
        manifest: Option<PathBuf>,
        #[arg(long, env = "DUALFLOW_OUT")]
        out: Option<PathBuf>,
        /// Reference CSV with columns delta,rule,t,re.
        #[arg(long)]
        check: Option<PathBuf>,
    },
    /// Run the invariant suites on small fixtures.
    Verify {
        /// Only suites whose name contains this string.
        #[arg(long)]
        only: Option<String>,
    },
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run {
            config,
            preset,
            out,
            jobs,
            seed,
            scheme,
            dt,
            check,
        } => {
            let file = match config.as_deref().map(ConfigFile::load).transpose() {
                Ok(f) => f,
                Err(e) => return config_error(e),
            };
            let overrides = Overrides {
                preset,
                scheme,
                dt,
                seed,
                out,
            };
            let cfg = match ExperimentConfig::resolve(file, &overrides) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            cmd_run(&cfg, jobs, check.as_deref())
        }
        Command::Table { manifest, out, check } => {
            let path = manifest
                .or(out)
                .unwrap_or_else(|| PathBuf::from(config::DEFAULT_OUT));
            match RunManifest::load(&path) {
                Ok(m) => report_table(&m, &path, check.as_deref()),
                Err(e) => config_error(e),
            }
        }
        Command::Verify { only } => {
            let results = run_suites(only.as_deref());
            if results.is_empty() {
                eprintln!("no suite matches; available: {}", verify::suite_names().join(", "));
                return EXIT_CONFIG;
            }
            for r in &results {
                println!("{}", r.render());
            }
            if results.iter().all(|r| r.pass) {
                EXIT_OK
            } else {
                EXIT_CHECK
            }
        }
    }
}

fn config_error(e: crate::Error) -> i32 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

fn cmd_run(cfg: &ExperimentConfig, jobs: Option<usize>, check: Option<&Path>) -> i32 {
    // fail before the expensive part if the reference cannot be read
    if let Some(path) = check {
        if let Err(e) = load_reference(path) {
            eprintln!("error: {e}");
            return EXIT_CHECK;
        }
    }
    let manifest = match run_experiment(cfg, jobs) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_PARTIAL;
        }
    };
    let code = report_table(&manifest, &cfg.out, check);
    let failed = manifest.failed_cells();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", manifest.cells.len());
        if code == EXIT_OK {
            return EXIT_PARTIAL;
        }
    }
    code
}

/// Prints the table, writes `table.csv`/`table.txt` next to the manifest and
/// applies `--check`.
fn report_table(m: &RunManifest, root: &Path, check: Option<&Path>) -> i32 {
    let table = ResultTable::from_manifest(m);
    let text = table.to_text();
    print!("{text}");
    let dir = if root.is_file() {
        root.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        root.to_path_buf()
    };
    let written = std::fs::write(dir.join("table.csv"), table.to_csv())
        .and_then(|_| std::fs::write(dir.join("table.txt"), &text));
    if let Err(e) = written {
        eprintln!("warning: cannot write table files: {e}");
    }
    let Some(path) = check else {
        return EXIT_OK;
    };
    let reference = match load_reference(path) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CHECK;
        }
    };
    let lines = check_table(&table, &reference);
    if lines.is_empty() {
        eprintln!("error: no reference row matches the noise ladder");
        return EXIT_CHECK;
    }
    for l in &lines {
        println!("{}", l.render());
    }
    if lines.iter().all(|l| l.pass) {
        EXIT_OK
    } else {
        EXIT_CHECK
    }
}
