//! Subcommand bodies. Each returns a `CliResult`; `main` turns errors into
//! exit codes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use fedsim_core::aggregation::AggregatorKind;
use fedsim_core::engine::{convergence_score, run_experiment, Experiment, ExperimentConfig, RoundLog};
use fedsim_core::hyper::HyperKind;
use rayon::prelude::*;

use crate::config::{load_config, LoadedConfig};
use crate::format::{
    collaborators_csv, comparison_csv, g6, rounds_csv, scan_columns, scans_csv, summary_csv, summary_rows, ComparisonRow,
    ROUNDS_HEADER,
};
use crate::manifest::RunManifest;
use crate::table::{read_rounds, read_scans};
use crate::{CliError, CliResult};

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SCANS_FILE: &str = "scans.csv";
pub const COLLABORATORS_FILE: &str = "collaborators.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const FAILURES_FILE: &str = "failures.csv";

/// Aggregator axis of the default sweep.
pub const DEFAULT_SWEEP_AGGREGATORS: [&str; 3] = ["fedavg", "fednova", "fedavgm"];
/// Hyperparameter axis of the default sweep.
pub const DEFAULT_SWEEP_HYPERS: [&str; 4] = ["constant", "lr_plateau", "adaptive_epoch", "adaptive_epoch+lr_plateau"];

/// Settings shared by `run` and `sweep`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub workers: Option<usize>,
}

/// Loads the config and applies command-line overrides.
fn prepare(opts: &RunOptions) -> CliResult<(LoadedConfig, PathBuf, usize)> {
    let mut loaded = load_config(opts.config.as_deref())?;
    if let Some(seed) = opts.seed {
        loaded.config.seed = seed;
    }
    if let Some(rounds) = opts.rounds {
        loaded.config.rounds = rounds;
    }
    loaded.config.resolve()?;
    let out = opts
        .out
        .clone()
        .or_else(|| loaded.config.output.dir.clone().map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set output.dir".into()))?;
    let workers = match opts.workers.or(loaded.config.output.workers) {
        Some(0) => return Err(CliError::Usage("--workers must be at least 1".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok((loaded, out, workers))
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers never see a half-written file.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes every artefact of one run into `dir`. Partial logs are still
/// written when `error` is set.
fn write_run(
    dir: &Path,
    loaded: &LoadedConfig,
    logs: &[RoundLog],
    error: Option<&fedsim_core::FedError>,
) -> CliResult<RunManifest> {
    create_dir(dir)?;
    let mut outputs = BTreeMap::new();
    write_atomic(&dir.join(ROUNDS_FILE), &rounds_csv(logs))?;
    outputs.insert("rounds".to_string(), ROUNDS_FILE.to_string());
    write_atomic(&dir.join(COLLABORATORS_FILE), &collaborators_csv(logs))?;
    outputs.insert("collaborators".to_string(), COLLABORATORS_FILE.to_string());
    if let Some(last) = logs.last() {
        write_atomic(&dir.join(SCANS_FILE), &scans_csv(last))?;
        outputs.insert("scans".to_string(), SCANS_FILE.to_string());
        let rows = summary_rows(&scan_columns(last))?;
        write_atomic(&dir.join(SUMMARY_FILE), &summary_csv(&rows))?;
        outputs.insert("summary".to_string(), SUMMARY_FILE.to_string());
    }
    let manifest = RunManifest {
        config_hash: loaded.hash.clone(),
        seed: loaded.config.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        rounds_requested: loaded.config.rounds,
        rounds_completed: logs.len(),
        sim_time_start_s: 0.0,
        sim_time_end_s: logs.last().map_or(0.0, |l| l.cum_time),
        outputs,
        status: error.map_or_else(|| "ok".to_string(), |e| e.to_string()),
        config: loaded.config.clone(),
    };
    write_atomic(&dir.join(MANIFEST_FILE), &manifest.to_json())?;
    Ok(manifest)
}

/// Runs one experiment and writes its outputs into `dir`.
fn execute(dir: &Path, loaded: &LoadedConfig, workers: usize) -> CliResult<(Vec<RoundLog>, RunManifest)> {
    match run_experiment(&loaded.config, workers) {
        Ok(logs) => {
            let manifest = write_run(dir, loaded, &logs, None)?;
            Ok((logs, manifest))
        }
        Err(partial) => {
            // Config errors fail before any output; round errors keep the
            // completed rounds on disk.
            if !partial.logs.is_empty() || !matches!(partial.error, fedsim_core::FedError::Config(_)) {
                write_run(dir, loaded, &partial.logs, Some(&partial.error))?;
            }
            Err(partial.error.into())
        }
    }
}

/// `fedsim run`
pub fn run(opts: &RunOptions) -> CliResult<RunManifest> {
    let (loaded, out, workers) = prepare(opts)?;
    Ok(execute(&out, &loaded, workers)?.1)
}

/// Result of one sweep cell.
#[derive(Debug)]
pub struct CellOutcome {
    pub aggregator: String,
    pub hyper: String,
    pub result: CliResult<(f64, f64)>,
}

/// Directory name for one sweep cell.
pub fn cell_dir_name(aggregator: &str, hyper: &str) -> String {
    format!("{aggregator}__{hyper}")
}

/// `fedsim sweep`: the aggregator x hyper grid, one run per cell, cells in
/// parallel. Failing cells are reported and left out of comparison.csv.
pub fn sweep(opts: &RunOptions, aggregators: &[String], hypers: &[String]) -> CliResult<Vec<CellOutcome>> {
    if aggregators.is_empty() || hypers.is_empty() {
        return Err(CliError::Usage("sweep axes must not be empty".into()));
    }
    for a in aggregators {
        a.parse::<AggregatorKind>()?;
    }
    for h in hypers {
        h.parse::<HyperKind>()?;
    }
    let (base, out, workers) = prepare(opts)?;
    create_dir(&out)?;
    let cells: Vec<(String, String)> = aggregators
        .iter()
        .flat_map(|a| hypers.iter().map(move |h| (a.clone(), h.clone())))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|(a, h)| {
                let mut loaded = base.clone();
                loaded.config.aggregator.name = a.clone();
                loaded.config.hyper.name = h.clone();
                let result = loaded
                    .config
                    .resolve()
                    .map_err(CliError::from)
                    .and_then(|_| execute(&out.join(cell_dir_name(a, h)), &loaded, 1))
                    .and_then(|(logs, _)| {
                        let last = logs.last().map_or(0.0, |l| l.metrics.mean_dice);
                        Ok((last, convergence_score(&logs)?))
                    });
                CellOutcome {
                    aggregator: a.clone(),
                    hyper: h.clone(),
                    result,
                }
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = String::from("aggregator,hyper,error\n");
    for cell in &outcomes {
        match &cell.result {
            Ok((dice, score)) => rows.push(ComparisonRow {
                aggregator: cell.aggregator.clone(),
                hyper: cell.hyper.clone(),
                final_mean_dice: *dice,
                convergence_score: *score,
            }),
            Err(e) => {
                eprintln!("sweep cell {} x {} failed: {e}", cell.aggregator, cell.hyper);
                let msg = e.to_string().replace(['\n', ','], " ");
                failures.push_str(&format!("{},{},{msg}\n", cell.aggregator, cell.hyper));
            }
        }
    }
    write_atomic(&out.join(COMPARISON_FILE), &comparison_csv(&rows))?;
    write_atomic(&out.join(FAILURES_FILE), &failures)?;
    Ok(outcomes)
}

/// `fedsim summarize`: statistics of the final round's per-scan metrics,
/// read from the scans.csv next to `rounds_path`.
pub fn summarize(rounds_path: &Path) -> CliResult<String> {
    let rounds = read_rounds(rounds_path)?;
    let last = rounds
        .last()
        .ok_or_else(|| CliError::Usage(format!("{}: no rounds logged", rounds_path.display())))?
        .round;
    let scans_path = rounds_path.with_file_name(SCANS_FILE);
    let scans = read_scans(&scans_path)?;
    let mut cols: [Vec<f64>; 12] = Default::default();
    for s in scans.iter().filter(|s| s.round == last) {
        for (c, v) in cols.iter_mut().zip(s.values) {
            c.push(v);
        }
    }
    if cols[0].is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no per-scan metrics for final round {last}",
            scans_path.display()
        )));
    }
    Ok(summary_csv(&summary_rows(&cols)?))
}

/// `fedsim describe-partition`: shard sizes as CSV.
pub fn describe_partition(config: Option<&Path>, seed: Option<u64>) -> CliResult<String> {
    let mut loaded = load_config(config)?;
    if let Some(s) = seed {
        loaded.config.seed = s;
    }
    describe(&loaded.config)
}

fn describe(config: &ExperimentConfig) -> CliResult<String> {
    let exp = Experiment::new(config, 1)?;
    let total: usize = exp.collaborators().iter().map(|c| c.shard.len()).sum();
    let mut out = String::from("collaborator_id,n_train,n_val,n_total,share,mean_tumor_size,speed_factor\n");
    for c in exp.collaborators() {
        let scans = c.shard.train.iter().chain(&c.shard.validation);
        let size: usize = scans.map(|s| s.tumor_size).sum();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.id(),
            c.shard.train.len(),
            c.shard.validation.len(),
            c.shard.len(),
            g6(c.shard.len() as f64 / total as f64),
            g6(size as f64 / c.shard.len() as f64),
            g6(c.speed_factor),
        ));
    }
    Ok(out)
}

/// `fedsim plot-data`: `(cum_time_s, metric)` pairs for each rounds.csv.
pub fn plot_data(rounds_paths: &[PathBuf], metric: &str) -> CliResult<Vec<(PathBuf, String)>> {
    if !ROUNDS_HEADER.contains(&metric) {
        return Err(CliError::Usage(format!(
            "unknown metric `{metric}`; expected one of {}",
            ROUNDS_HEADER.join(", ")
        )));
    }
    rounds_paths
        .iter()
        .map(|p| {
            let rows = read_rounds(p)?;
            let mut out = format!("time_s,{metric}\n");
            for r in &rows {
                let t = r.column("cum_time_s").expect("column exists");
                let v = r.column(metric).expect("checked above");
                out.push_str(&format!("{},{}\n", g6(t), g6(v)));
            }
            Ok((p.clone(), out))
        })
        .collect()
}

/// Output file name for a plot series: the run directory's name plus the
/// metric, so series from a sweep do not collide.
pub fn plot_file_name(rounds_path: &Path, metric: &str) -> String {
    let run = rounds_path
        .parent()
        .and_then(|d| d.file_name())
        .map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned());
    format!("{run}.{metric}.csv")
}
