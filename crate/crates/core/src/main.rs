use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use modelcal::io::{self, Command, DesignArg, OutputFormat, RunConfig};
use modelcal::{Error, Family};

#[derive(Parser)]
#[command(name = "modelcal", version, about = "Survey regression calibrated to external model summaries")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Linear,
    Logistic,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Linear => Family::Linear,
            FamilyArg::Logistic => Family::Logistic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

fn design_arg(s: &str) -> Result<DesignArg, String> {
    io::parse_design(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a Monte Carlo scenario and write the metrics table.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Bias chart; a coverage chart is written next to it.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        replications_log: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Use the full-size population, sample sizes and replication count.
        #[arg(long)]
        full_scale: bool,
    },
    /// Calibrated estimate with standard errors and confidence intervals.
    Estimate {
        #[arg(long)]
        internal: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        /// Comma-separated covariates of the full model (default: all).
        #[arg(long, value_delimiter = ',')]
        full: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        reduced: Vec<String>,
        #[arg(long, value_enum, default_value = "linear")]
        family: FamilyArg,
        /// srs[:N], poisson or unknown.
        #[arg(long, value_parser = design_arg)]
        design: Option<DesignArg>,
        #[arg(long)]
        external_only: bool,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrated weights for a known benchmark.
    Calibrate {
        #[arg(long)]
        internal: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        reduced: Vec<String>,
        #[arg(long, value_enum, default_value = "linear")]
        family: FamilyArg,
        #[arg(long, value_parser = design_arg)]
        design: Option<DesignArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reduced-model summary from a selection-biased big sample.
    Propensity {
        #[arg(long)]
        big: PathBuf,
        #[arg(long)]
        internal: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        reduced: Vec<String>,
        #[arg(long, value_enum, default_value = "linear")]
        family: FamilyArg,
        #[arg(long, value_parser = design_arg)]
        design: Option<DesignArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pool an internal and an external summary.
    Pool {
        #[arg(long)]
        internal_summary: PathBuf,
        #[arg(long)]
        external_summary: PathBuf,
        #[arg(long)]
        external_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config(cmd: Cmd) -> RunConfig {
    let mut format = OutputFormat::Json;
    let (command, out) = match cmd {
        Cmd::Simulate {
            config,
            out,
            svg,
            replications_log,
            threads,
            full_scale,
        } => (
            Command::Simulate {
                config,
                out,
                svg,
                replications_log,
                threads,
                full_scale,
            },
            None,
        ),
        Cmd::Estimate {
            internal,
            summary,
            full,
            reduced,
            family,
            design,
            external_only,
            level,
            format: f,
            out,
        } => {
            if let FormatArg::Csv = f {
                format = OutputFormat::Csv;
            }
            (
                Command::Estimate {
                    internal,
                    summary,
                    full,
                    reduced,
                    family: family.into(),
                    design,
                    external_only,
                    level,
                },
                out,
            )
        }
        Cmd::Calibrate {
            internal,
            summary,
            reduced,
            family,
            design,
            out,
        } => (
            Command::Calibrate {
                internal,
                summary,
                reduced,
                family: family.into(),
                design,
            },
            out,
        ),
        Cmd::Propensity {
            big,
            internal,
            reduced,
            family,
            design,
            out,
        } => (
            Command::Propensity {
                big,
                internal,
                reduced,
                family: family.into(),
                design,
            },
            out,
        ),
        Cmd::Pool {
            internal_summary,
            external_summary,
            external_only,
            out,
        } => (
            Command::Pool {
                internal_summary,
                external_summary,
                external_only,
            },
            out,
        ),
    };
    RunConfig { command, out, format }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match io::run_command(&config(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}

fn report(e: &Error) {
    eprintln!("{}", io::error_record(e));
}
