//! File formats, run configuration and the command-line pipeline for
//! `drfkit-core`.

// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod config;
pub mod data;
pub mod error;
pub mod estimate;
pub mod mc_presets;
pub mod results;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::RunConfig;
pub use error::{CliError, Result};

/// Paths written by [`estimate_to_dir`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub results: PathBuf,
    pub report: PathBuf,
    pub timing: PathBuf,
    pub psi: Option<PathBuf>,
}

/// Ingests the configured data, runs the pipeline and writes
/// `results.csv`, `report.txt`, `timing.txt` and optionally `psi.csv` under
/// `out_dir`. Everything except `timing.txt` is a function of the config and
/// the data alone.
pub fn estimate_to_dir(cfg: &RunConfig, out_dir: &Path) -> Result<RunFiles> {
    let started = Instant::now();
    cfg.validate()?;
    let data_path = cfg
        .data_path
        .as_deref()
        .ok_or_else(|| CliError::config("data.path", "an input CSV is required"))?;
    let data = data::ingest_csv(Path::new(data_path), &cfg.roles)?;
    let run = estimate::run_estimate(cfg, &data.sample)?;

    let mut extra = vec![
        ("data.rows_read".to_string(), data.rows_read.to_string()),
        ("data.rows_dropped".to_string(), data.rows_dropped.to_string()),
        ("data.covariate_columns".to_string(), data.covariate_names.join(",")),
    ];
    for (col, count, median) in &data.imputed {
        extra.push((format!("data.imputed.{col}"), format!("{count} cells, median {median}")));
    }
    let header = results::provenance(cfg, &extra);

    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let files = RunFiles {
        results: out_dir.join("results.csv"),
        report: out_dir.join("report.txt"),
        timing: out_dir.join("timing.txt"),
        psi: cfg.psi_dump.then(|| out_dir.join("psi.csv")),
    };
    results::write_file(&files.results, &results::render_results(&header, &run.rows)?)?;
    let mut report = String::from("drfkit run report\n\n");
    report.push_str(&format!(
        "input: {data_path} ({} rows read, {} dropped for missing outcome/treatment/weight)\n",
        data.rows_read, data.rows_dropped
    ));
    for (col, count, median) in &data.imputed {
        report.push_str(&format!(
            "imputed {count} missing values of `{col}` with median {median}\n"
        ));
    }
    report.push_str(&run.report);
    results::write_file(&files.report, &report)?;
    if let Some(p) = &files.psi {
        results::write_file(p, &results::render_psi(&header, &run.psi))?;
    }
    let timing = format!(
        "threads: {}\nelapsed_seconds: {}\n",
        rayon::current_num_threads(),
        started.elapsed().as_secs_f64()
    );
    results::write_file(&files.timing, &timing)?;
    Ok(files)
}
