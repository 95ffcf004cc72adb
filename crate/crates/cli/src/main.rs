use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tempered_gp_cli::config::ExperimentKind;
use tempered_gp_cli::plot::{emit_plot_data, write_plot_rows, Figure};
use tempered_gp_cli::{run_experiment, CliError, CliResult, ExperimentConfig, THREADS_ENV};

#[derive(Parser)]
#[command(name = "tempered-gp", version, about = "Tempered Gaussian-process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a results.csv into long-format (x, y, series) rows.
    PlotData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        figure: Figure,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the train/test split described by a config's `data` section.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a thread count, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("{THREADS_ENV}: {e}")))
}

fn execute(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let report = run_experiment(&cfg.resolve()?)?;
            eprintln!("wrote {} files to {}", report.files.len(), report.output_dir.display());
        }
        Command::GenData { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.experiment = ExperimentKind::GenData;
            cfg.kernel = None;
            cfg.temperatures = None;
            cfg.temperature_grid = None;
            cfg.regression = None;
            cfg.ess = None;
            cfg.draws_per_sample = None;
            cfg.probe = None;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let report = run_experiment(&cfg.resolve()?)?;
            eprintln!("wrote {} files to {}", report.files.len(), report.output_dir.display());
        }
        Command::PlotData { input, figure, output } => {
            let rows = emit_plot_data(&input, figure)?;
            match output {
                Some(path) => write_plot_rows(&rows, BufWriter::new(File::create(path)?))?,
                None => write_plot_rows(&rows, io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
