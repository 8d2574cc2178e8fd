use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Preset};
use crate::diagnostics::write_trace_csv;
use crate::error::{Error, Result};
use crate::flow::IntegrateConfig;
use crate::operator::{write_triplets_csv, Grid, SparseMatrix, WeightedVector};
use crate::problems::{gaussian_deconvolution_fixture, shepp_logan_fixture, Problem};
use crate::rules::{run_rules, OutcomeSummary, Rule};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEntry {
    pub label: String,
    pub summary: OutcomeSummary,
    pub outcome_file: String,
    pub reconstruction_file: String,
    /// `[min, max]` mapped to `[0, 65535]` in a PGM reconstruction.
    pub pgm_scale: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    /// Entry of the configured noise ladder (relative for tomography).
    pub noise_level: f64,
    pub seed: u64,
    /// Absolute noise level `||y^delta - y||`.
    pub delta: Option<f64>,
    pub status: CellStatus,
    pub error: Option<String>,
    pub steps: Option<usize>,
    pub t_end: Option<f64>,
    pub trace_file: Option<String>,
    pub data_file: Option<String>,
    pub outcomes: Vec<OutcomeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub truth_file: String,
    pub truth_pgm_scale: Option<[f64; 2]>,
    pub operator_file: Option<String>,
    pub cells: Vec<CellRecord>,
}

impl RunManifest {
    pub fn failed_cells(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| c.status == CellStatus::Failed)
            .count()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Every file referenced by the manifest, relative to the run root.
    pub fn files(&self) -> Vec<&str> {
        let mut v = vec![self.truth_file.as_str()];
        v.extend(self.operator_file.as_deref());
        for c in &self.cells {
            v.extend(c.trace_file.as_deref());
            v.extend(c.data_file.as_deref());
            for o in &c.outcomes {
                v.push(&o.outcome_file);
                v.push(&o.reconstruction_file);
            }
        }
        v
    }
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    total_seconds: f64,
    cells: Vec<CellTiming>,
}

#[derive(Debug, Clone, Serialize)]
struct CellTiming {
    noise_level: f64,
    seed: u64,
    seconds: f64,
}

/// Builds the fixture of one cell.
pub fn build_problem(cfg: &ExperimentConfig, noise_level: f64, seed: u64) -> Result<Problem> {
    match cfg.preset {
        Preset::Deconvolution => gaussian_deconvolution_fixture(cfg.grid_n, noise_level, seed),
        Preset::Tomography => {
            shepp_logan_fixture(cfg.image_n, cfg.n_angles, cfg.n_detectors, noise_level, seed)
        }
    }
}

fn integrate_config(cfg: &ExperimentConfig) -> IntegrateConfig {
    let theta_a = cfg
        .rules
        .iter()
        .find_map(|r| match r {
            Rule::Hdp(h) => Some(h.a),
            _ => None,
        })
        .unwrap_or(0.1);
    let mut ic = IntegrateConfig::new(cfg.scheme, cfg.dt)
        .with_t_max(cfg.t_max)
        .with_keep_states(None)
        .with_record_every(cfg.record_every)
        .with_theta_a(theta_a);
    ic.max_steps = cfg.max_steps;
    ic
}

fn cell_dir_name(noise_level: f64, seed: u64) -> String {
    format!("noise-{noise_level:e}_seed-{seed}")
}

/// Executes every `(noise level, seed)` cell of `cfg` and writes the outputs
/// below `cfg.out`. All rules of a cell share one integration. Cells run on
/// a pool of `jobs` threads; a failing cell is recorded and the rest go on.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<RunManifest> {
    let start = Instant::now();
    let root = cfg.out.clone();
    fs::create_dir_all(root.join("cells"))?;

    let reference = build_problem(cfg, cfg.noise_levels[0], cfg.seeds[0])?;
    let truth = reference
        .truth
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("fixture has no ground truth".into()))?;
    let (truth_file, truth_pgm_scale) = write_vector(&root, "truth", truth, &reference)?;
    let operator_file = if cfg.export_operator {
        let name = "operator.csv".to_string();
        let m = match reference.op.sparse() {
            Some(s) => s.clone(),
            None => dense_to_sparse(&reference.op.to_dense()),
        };
        write_triplets_csv(&m, BufWriter::new(File::create(root.join(&name))?))?;
        Some(name)
    } else {
        None
    };

    let cells: Vec<(f64, u64)> = cfg
        .noise_levels
        .iter()
        .flat_map(|d| cfg.seeds.iter().map(move |s| (*d, *s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let results: Vec<(CellRecord, f64)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(noise, seed)| {
                let t0 = Instant::now();
                let rec = match run_cell(cfg, &root, noise, seed) {
                    Ok(rec) => rec,
                    Err(e) => {
                        log::warn!("cell noise={noise:e} seed={seed} failed: {e}");
                        CellRecord {
                            noise_level: noise,
                            seed,
                            delta: None,
                            status: CellStatus::Failed,
                            error: Some(e.to_string()),
                            steps: None,
                            t_end: None,
                            trace_file: None,
                            data_file: None,
                            outcomes: Vec::new(),
                        }
                    }
                };
                (rec, t0.elapsed().as_secs_f64())
            })
            .collect()
    });

    let timing = Timing {
        total_seconds: start.elapsed().as_secs_f64(),
        cells: results
            .iter()
            .map(|(r, s)| CellTiming {
                noise_level: r.noise_level,
                seed: r.seed,
                seconds: *s,
            })
            .collect(),
    };
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        truth_file,
        truth_pgm_scale,
        operator_file,
        cells: results.into_iter().map(|(r, _)| r).collect(),
    };
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    // wall time lives apart from the manifest so that outputs stay reproducible
    write_json(&root.join(TIMING_FILE), &timing)?;
    Ok(manifest)
}

fn run_cell(cfg: &ExperimentConfig, root: &Path, noise: f64, seed: u64) -> Result<CellRecord> {
    let problem = build_problem(cfg, noise, seed)?;
    let rel_dir = PathBuf::from("cells").join(cell_dir_name(noise, seed));
    fs::create_dir_all(root.join(&rel_dir))?;
    let rel = |name: &str| rel_dir.join(name).to_string_lossy().into_owned();

    let data_file = rel("data.csv");
    write_data_csv(&root.join(&data_file), &problem)?;

    log::info!("cell noise={noise:e} seed={seed}: integrating");
    let (outcomes, traj) = run_rules(&problem, &cfg.rules, &integrate_config(cfg))?;
    let trace_file = rel("trace.csv");
    write_trace_csv(&traj.records, BufWriter::new(File::create(root.join(&trace_file))?))?;

    let mut entries = Vec::with_capacity(outcomes.len());
    for (k, out) in outcomes.iter().enumerate() {
        let stem = format!("rule{k}_{}", kind_name(&out.rule));
        let outcome_file = rel(&format!("{stem}.json"));
        let summary = out.summary();
        write_json(&root.join(&outcome_file), &summary)?;
        let (reconstruction_file, pgm_scale) =
            write_vector(root, &rel(&format!("{stem}_x")), &out.state.x, &problem)?;
        entries.push(OutcomeEntry {
            label: out.rule.label(),
            summary,
            outcome_file,
            reconstruction_file,
            pgm_scale,
        });
    }
    Ok(CellRecord {
        noise_level: noise,
        seed,
        delta: Some(problem.delta),
        status: CellStatus::Ok,
        error: None,
        steps: Some(traj.steps),
        t_end: Some(traj.final_state.t),
        trace_file: Some(trace_file),
        data_file: Some(data_file),
        outcomes: entries,
    })
}

fn kind_name(rule: &Rule) -> &'static str {
    match rule {
        Rule::Apriori(_) => "apriori",
        Rule::Dp(_) => "dp",
        Rule::Hdp(_) => "hdp",
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Writes `stem.pgm` for images and `stem.csv` otherwise; returns the file
/// name relative to `root` and the PGM scaling.
fn write_vector(
    root: &Path,
    stem: &str,
    x: &WeightedVector,
    problem: &Problem,
) -> Result<(String, Option<[f64; 2]>)> {
    match problem.image_shape {
        Some((rows, cols)) => {
            let name = format!("{stem}.pgm");
            let scale = write_pgm16(&root.join(&name), x.values(), rows, cols)?;
            Ok((name, Some(scale)))
        }
        None => {
            let name = format!("{stem}.csv");
            let mut f = BufWriter::new(File::create(root.join(&name))?);
            writeln!(f, "node,value")?;
            for (s, v) in nodes(x.grid()).iter().zip(x.values()) {
                writeln!(f, "{s:.17e},{v:.17e}")?;
            }
            f.flush()?;
            Ok((name, None))
        }
    }
}

fn nodes(grid: &Grid) -> Array1<f64> {
    if grid.is_unit() || grid.len() < 2 {
        Array1::from_iter((0..grid.len()).map(|i| i as f64))
    } else {
        Grid::unit_interval_nodes(grid.len())
    }
}

fn write_data_csv(path: &Path, problem: &Problem) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "index,y_delta,y")?;
    for (i, yd) in problem.data.values().iter().enumerate() {
        match &problem.exact_data {
            Some(y) => writeln!(f, "{i},{yd:.17e},{:.17e}", y.values()[i])?,
            None => writeln!(f, "{i},{yd:.17e},")?,
        }
    }
    f.flush()?;
    Ok(())
}

/// Binary 16-bit PGM (P5, big-endian, row-major) with `[min, max]` mapped
/// linearly to `[0, 65535]`.
pub fn write_pgm16(path: &Path, values: &Array1<f64>, rows: usize, cols: usize) -> Result<[f64; 2]> {
    if values.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            found: values.len(),
        });
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P5\n{cols} {rows}\n65535\n")?;
    for v in values {
        let level = if span > 0.0 {
            ((v - min) / span * 65535.0).round() as u16
        } else {
            0
        };
        f.write_all(&level.to_be_bytes())?;
    }
    f.flush()?;
    Ok([min, max])
}

fn dense_to_sparse(m: &ndarray::Array2<f64>) -> SparseMatrix {
    let rows = m
        .outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| (j, *v))
                .collect()
        })
        .collect();
    SparseMatrix::from_rows(m.ncols(), rows)
}
