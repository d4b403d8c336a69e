//! Running a plan's cells and collecting their final accuracies.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! plan.cfg                      resolved plan
//! <cell>/config.cfg             the cell's own resolved settings
//! <cell>/metrics.csv
//! <cell>/checkpoint.lmck        written last; its presence marks the cell done
//! runs.csv                      one row per cell, in plan order
//! summary.csv                   per (method, sweep) mean and 2σ over seeds
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use layermatch::trainer::{read_metrics_csv, run, write_metrics_csv, TrainData};
use rayon::prelude::*;

use crate::config::{Cell, ExperimentPlan};
use crate::error::{CliError, Result};
use crate::report::{summarize, write_summary_csv, RunRecord};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.lmck";
pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Ran,
    Skipped,
    Failed,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub status: CellStatus,
    pub final_accuracy: Option<f64>,
    pub error: Option<String>,
}

impl CellOutcome {
    fn record(&self) -> RunRecord {
        RunRecord {
            cell: self.cell.name(),
            method: self.cell.method.to_string(),
            sweep: self.cell.sweep_label(),
            seed: self.cell.seed,
            status: match self.status {
                CellStatus::Failed => "failed".into(),
                _ => "ok".into(),
            },
            final_accuracy: self.final_accuracy,
            error: self.error.clone().unwrap_or_default(),
        }
    }
}

/// Trains one cell into `dir`. With `resume`, a cell whose checkpoint already
/// exists is not rerun; its accuracy is read back from the metrics file.
pub fn run_cell(cell: &Cell, dir: &Path, resume: bool) -> Result<(CellStatus, f64)> {
    let metrics_path = dir.join(METRICS_FILE);
    let checkpoint = dir.join(CHECKPOINT_FILE);
    if resume && checkpoint.exists() {
        let metrics = read_metrics_csv(fs::File::open(&metrics_path)?)?;
        let acc = metrics
            .last()
            .map(|m| m.test_accuracy)
            .ok_or_else(|| CliError::Argument(format!("{} has no rows", metrics_path.display())))?;
        return Ok((CellStatus::Skipped, acc));
    }
    fs::create_dir_all(dir)?;
    let mut plan = ExperimentPlan {
        methods: vec![cell.method],
        seeds: vec![cell.seed],
        ..ExperimentPlan::default()
    };
    plan.base = cell.settings.clone();
    plan.output_dir = dir.to_path_buf();
    fs::write(dir.join("config.cfg"), plan.dump())?;

    let data = TrainData::build(&cell.settings.data, cell.seed)?;
    let out = run(&cell.settings.train, &data)?;
    let acc = out
        .metrics
        .last()
        .map(|m| m.test_accuracy)
        .ok_or_else(|| CliError::Argument("run produced no metrics".into()))?;
    write_metrics_csv(fs::File::create(&metrics_path)?, &out.metrics)?;
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    out.state.save_checkpoint(&tmp)?;
    fs::rename(tmp, checkpoint)?;
    Ok((CellStatus::Ran, acc))
}

pub fn cell_dir(plan: &ExperimentPlan, cell: &Cell) -> PathBuf {
    plan.output_dir.join(cell.name())
}

/// Runs every cell with at most `jobs` in flight. Failures are recorded and
/// do not stop the other cells; `runs.csv` and `summary.csv` are always written.
pub fn run_matrix(plan: &ExperimentPlan, jobs: usize) -> Result<Vec<CellOutcome>> {
    let cells = plan.cells()?;
    fs::create_dir_all(&plan.output_dir)?;
    fs::write(plan.output_dir.join("plan.cfg"), plan.dump())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Argument(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| match run_cell(cell, &cell_dir(plan, cell), true) {
                Ok((status, acc)) => CellOutcome {
                    cell: cell.clone(),
                    status,
                    final_accuracy: Some(acc),
                    error: None,
                },
                Err(e) => CellOutcome {
                    cell: cell.clone(),
                    status: CellStatus::Failed,
                    final_accuracy: None,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    });

    let records: Vec<RunRecord> = outcomes.iter().map(CellOutcome::record).collect();
    write_runs_csv(&plan.output_dir.join(RUNS_FILE), &records)?;
    let summary = summarize(&records);
    write_summary_csv(fs::File::create(plan.output_dir.join(SUMMARY_FILE))?, &summary)?;
    Ok(outcomes)
}

pub fn write_runs_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
