//! Command-line orchestration: dataset generation, the two training phases,
//! evaluation, and run aggregation. Configuration comes from per-subcommand
//! TOML files with flag overrides (flags > file > defaults); every default
//! matches the published protocol. Outputs land in `--out-dir`, or the
//! directory named by `SDPKD_OUT_DIR`, or the working directory.

mod commands;
mod config;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{
    default_out_dir, DistillConfig, EvaluateConfig, GenDataConfig, ModelSection, SplitSection,
    TrainTeacherConfig, OUT_DIR_ENV,
};
pub use report::{build_report, label_for, render_json, render_text, ReportCell};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("cannot read {path}: {msg}")]
    Input { path: PathBuf, msg: String },
    #[error("{0}")]
    Render(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Data(#[from] crate::ehr::DataError),
    #[error(transparent)]
    Missing(#[from] crate::missingness::MissingnessError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Render(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "sdpkd",
    about = "Sequential diagnosis prediction under uncertain missing visit data, \
             trained by teacher-student knowledge distillation on synthetic EHR cohorts"
)]
struct Cli {
    /// Output directory (overrides SDPKD_OUT_DIR).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hierarchical-EHR dataset file.
    GenData(GenDataArgs),
    /// Train the CMAG teacher on complete data with curriculum erasing.
    TrainTeacher(TrainTeacherArgs),
    /// Distill a frozen teacher into the MAG student under a missingness spec.
    Distill(DistillArgs),
    /// Evaluate a checkpoint under a missingness spec.
    Evaluate(EvaluateArgs),
    /// Aggregate run metrics logs into a comparison grid.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the patient count.
    #[arg(long)]
    patients: Option<usize>,
    /// Output dataset path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
pub struct TrainTeacherArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file (from gen-data).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Run label; names the checkpoint, metrics, and report files.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
pub struct DistillArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Frozen teacher checkpoint.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Missingness triple "(p_D, p_N, p_C)": demographics, notes, codes.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Drop every distillation term: the no-distillation baseline.
    #[arg(long)]
    no_kd: bool,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Missingness triple "(p_D, p_N, p_C)".
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Metrics logs to aggregate.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Output format: text, json, or both.
    #[arg(long, default_value = "text")]
    format: String,
    /// Also write the grid to this path (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let out_dir = cli.out_dir.clone().unwrap_or_else(default_out_dir);
    match &cli.command {
        Command::GenData(args) => commands::cmd_gen_data(args, &out_dir),
        Command::TrainTeacher(args) => commands::cmd_train_teacher(args, &out_dir),
        Command::Distill(args) => commands::cmd_distill(args, &out_dir),
        Command::Evaluate(args) => commands::cmd_evaluate(args, &out_dir),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let cells = build_report(&args.logs)?;
    match args.format.as_str() {
        "text" => print!("{}", render_text(&cells)),
        "json" => println!("{}", render_json(&cells)?),
        "both" => {
            print!("{}", render_text(&cells));
            println!("{}", render_json(&cells)?);
        }
        other => {
            return Err(CliError::Render(format!(
                "unknown format {other:?}; expected text, json, or both"
            )))
        }
    }
    if let Some(out) = &args.out {
        std::fs::write(out, render_json(&cells)?)?;
    }
    Ok(())
}

/// Binary entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
