use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use layermatch::theoryverify::{write_report_csv, write_report_text, CheckRow, GradcheckConfig};
use layermatch::trainer::Method;
use layermatch_cli::config::{load_config, ExperimentPlan};
use layermatch_cli::matrix::{self, read_runs_csv, run_cell, run_matrix, CellStatus, RUNS_FILE};
use layermatch_cli::report::{render, summarize, Format};
use layermatch_cli::verify::{self, Check};
use layermatch_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "layermatch", version, about = "Semi-supervised LayerMatch lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single run and write its metrics and checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every method × seed × sweep cell of a config.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Numerical verification checks.
    Verify {
        #[arg(long)]
        check: Check,
        #[arg(long, default_value = "text")]
        format: Format,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// gradcheck: sampled coordinates per surface.
        #[arg(long, default_value_t = 100)]
        coords: usize,
        /// gradcheck: relative error bound; lemma41: absolute error bound.
        #[arg(long)]
        tolerance: Option<f64>,
        /// chainrule: number of random models.
        #[arg(long, default_value_t = 100)]
        models: usize,
        /// lemma41: grid spacings.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.01")]
        spacings: Vec<f64>,
        /// theorem42: training config (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 3)]
        window: usize,
    },
    /// Summarize a matrix output directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "text")]
        format: Format,
    },
}

fn plan_from(config: Option<&PathBuf>) -> Result<ExperimentPlan> {
    let mut plan = match config {
        Some(path) => load_config(path)?,
        None => ExperimentPlan::default(),
    };
    plan.apply_env_seed(std::env::var("LAYERMATCH_SEED").ok().as_deref())?;
    Ok(plan)
}

fn train(config: Option<PathBuf>, method: Option<Method>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut plan = plan_from(config.as_ref())?;
    if let Some(m) = method {
        plan.methods = vec![m];
    }
    if let Some(s) = seed {
        plan.seeds = vec![s];
    }
    if let Some(o) = out {
        plan.output_dir = o;
    }
    let cells = plan.cells()?;
    if cells.len() != 1 {
        return Err(CliError::Argument(format!(
            "train runs exactly one cell but the config describes {}; use `matrix` or pass --method/--seed",
            cells.len()
        )));
    }
    print!("{}", plan.dump());
    let start = Instant::now();
    let (_, acc) = run_cell(&cells[0], &plan.output_dir, false)?;
    println!(
        "{}: final test accuracy {:.2}% in {:.1}s -> {}",
        cells[0].name(),
        100.0 * acc,
        start.elapsed().as_secs_f64(),
        plan.output_dir.display()
    );
    Ok(())
}

fn run_matrix_cmd(config: PathBuf, jobs: usize, out: Option<PathBuf>) -> Result<()> {
    let mut plan = plan_from(Some(&config))?;
    if let Some(o) = out {
        plan.output_dir = o;
    }
    let outcomes = run_matrix(&plan, jobs)?;
    for o in &outcomes {
        let status = match o.status {
            CellStatus::Ran => "ran",
            CellStatus::Skipped => "skipped (checkpoint present)",
            CellStatus::Failed => "FAILED",
        };
        match (&o.final_accuracy, &o.error) {
            (Some(a), _) => eprintln!("{:<40} {status} {:.2}%", o.cell.name(), 100.0 * a),
            (None, Some(e)) => eprintln!("{:<40} {status}: {e}", o.cell.name()),
            _ => eprintln!("{:<40} {status}", o.cell.name()),
        }
    }
    let records = read_runs_csv(&plan.output_dir.join(RUNS_FILE))?;
    let summary = summarize(&records);
    if !summary.is_empty() {
        print!("{}", render(&summary, Format::Text)?);
    }
    let failed = outcomes.iter().filter(|o| o.status == CellStatus::Failed).count();
    if failed > 0 {
        return Err(CliError::CellsFailed {
            failed,
            total: outcomes.len(),
        });
    }
    Ok(())
}

fn emit(rows: &[CheckRow], format: Format, out: Option<PathBuf>) -> Result<()> {
    let mut buf = Vec::new();
    match format {
        Format::Csv => write_report_csv(&mut buf, rows)?,
        Format::Text => write_report_text(&mut buf, rows)?,
        Format::Json => {
            return Err(CliError::Argument("verify supports csv and text output".into()))
        }
    }
    match out {
        Some(path) => fs::write(path, buf)?,
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            method,
            seed,
            out,
        } => train(config, method, seed, out),
        Command::Matrix { config, jobs, out } => run_matrix_cmd(config, jobs, out),
        Command::Verify {
            check,
            format,
            out,
            seed,
            coords,
            tolerance,
            models,
            spacings,
            config,
            epsilon,
            window,
        } => (|| {
            let rows = match check {
                Check::Gradcheck => verify::gradcheck(&GradcheckConfig {
                    n_coords: coords,
                    tolerance: tolerance.unwrap_or(1e-4),
                    seed,
                    ..GradcheckConfig::default()
                })?,
                Check::ChainRule => verify::chainrule(models, seed, tolerance.unwrap_or(1e-10))?,
                Check::Lemma41 => verify::lemma41(&spacings, tolerance.unwrap_or(1e-3))?,
                Check::Theorem42 => {
                    let plan = plan_from(config.as_ref())?;
                    let seed = plan.seeds.first().copied().unwrap_or(seed);
                    let mut settings = plan.base.clone();
                    settings.train.method = plan.methods[0];
                    verify::theorem42(&settings, seed, epsilon, window)?
                }
            };
            emit(&rows, format, out)?;
            let failed = rows.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                return Err(CliError::Argument(format!("{failed} check(s) failed")));
            }
            Ok(())
        })(),
        Command::Report { input, format } => (|| {
            let records = read_runs_csv(&input.join(matrix::RUNS_FILE))?;
            print!("{}", render(&summarize(&records), format)?);
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
