//! `cmcsweep` batch front-end.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical
//! failure, 4 I/O or parse error.

mod commands;

use clap::{Parser, Subcommand, ValueEnum};
use cmcsweep::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "cmcsweep", version, about = "Min-max CMC spheres in a Riemannian 3-sphere")]
struct Cli {
    /// Worker threads; 0 uses all cores. Overrides `run.threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,

    /// Override a configuration key, `key=value`; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory; overrides `output.dir`.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Stereographic,
    Slice,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Latitude sweepout checkpoint and its energy profile.
    Sweepout(ConfigArgs),
    /// Mountain pass and critical point extraction over the H and ε schedules.
    Minmax(ConfigArgs),
    /// ω/H table over the H grid, for every ε.
    Hsweep(ConfigArgs),
    /// Gradient flow from a map file.
    Flow {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Initial map (PLY).
        #[arg(short, long)]
        input: PathBuf,
        /// Tracked volume of the initial map.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        volume: f64,
    },
    /// Residuals, concentration, blow-up, Morse index and energy bound of a map.
    Diagnose {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        h: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        /// Tracked volume of the map.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        volume: f64,
        /// Configuration for the metric and diagnostic thresholds.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// JSON report path; stdout if absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// R³ mesh of a map for viewing.
    Export {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long, value_enum, default_value_t = ModeArg::Stereographic)]
        mode: ModeArg,
        /// Fail instead of rotating a map that reaches the projection pole.
        #[arg(long)]
        no_auto_rotate: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Precondition(_) | Error::Capacity { .. } | Error::PoleHit { .. } => 2,
        Error::Io(_) | Error::Json(_) | Error::Parse { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Sweepout(a) => commands::sweepout(&a, cli.threads),
        Command::Minmax(a) => commands::minmax(&a, cli.threads),
        Command::Hsweep(a) => commands::hsweep(&a, cli.threads),
        Command::Flow { cfg, input, volume } => commands::flow(&cfg, cli.threads, &input, volume),
        Command::Diagnose {
            input,
            h,
            eps,
            volume,
            config,
            set,
            output,
        } => commands::diagnose(
            &commands::DiagnoseArgs {
                input,
                h,
                eps,
                volume,
                config,
                set,
                output,
            },
            cli.threads,
        ),
        Command::Export {
            input,
            mode,
            no_auto_rotate,
            output,
        } => commands::export(&input, mode, !no_auto_rotate, &output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
