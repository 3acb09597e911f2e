//! `fcos` — command-line driver for the detection toolkit.
//!
//! Exit codes: 0 success, 2 I/O error, 3 configuration error, 4 numeric
//! check failure (`--check` runs and `gradcheck`).

mod commands;
mod config;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use config::{config_help, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Config(String),
    Check(String),
}

impl CliError {
    pub fn io(message: String) -> Self {
        CliError::Io(message)
    }

    pub fn config(message: String) -> Self {
        CliError::Config(message)
    }

    pub fn check(message: String) -> Self {
        CliError::Check(message)
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 2,
            CliError::Config(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Config(m) | CliError::Check(m) => m,
        }
    }
}

impl From<fcos_core::ingestion::IngestError> for CliError {
    fn from(e: fcos_core::ingestion::IngestError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<fcos_core::analysis::AnalysisError> for CliError {
    fn from(e: fcos_core::analysis::AnalysisError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<fcos_core::metrics::MetricsError> for CliError {
    fn from(e: fcos_core::metrics::MetricsError) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BprMode {
    Fcos,
    Anchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    None,
    Threshold,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelsArg {
    Fpn,
    P4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn as_bool(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

impl FormatArg {
    fn as_format(self) -> fcos_core::ingestion::ReportFormat {
        match self {
            FormatArg::Json => fcos_core::ingestion::ReportFormat::Json,
            FormatArg::Csv => fcos_core::ingestion::ReportFormat::Csv,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "fcos",
    about = "Anchor-free detection toolkit: label assignment studies, detection metrics, loss checks and fixtures",
    version
)]
struct Cli {
    /// JSON config file with flat dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set assign.radius=2.0 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Annotation file (overrides data.annotations).
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,

    /// Worker threads (overrides runtime.threads; 0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Best-possible-recall study over an annotation file.
    Bpr {
        #[arg(long, value_enum, default_value = "fcos")]
        mode: BprMode,
        /// Low-quality matching policy (anchor mode).
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        /// Level layout for the study.
        #[arg(long, value_enum, default_value = "fpn")]
        levels: LevelsArg,
        /// Compute at native resolution instead of the standard resize.
        #[arg(long)]
        no_resize: bool,
        /// Count crowd regions as recallable targets.
        #[arg(long)]
        include_crowd: bool,
        /// Verify the result against the published value for this setup.
        #[arg(long)]
        check: bool,
        /// Report file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
    },
    /// Ambiguous-sample ratios over an annotation file.
    Ambiguity {
        #[arg(long, value_enum)]
        center_sampling: Option<Toggle>,
        #[arg(long, value_enum)]
        fpn: Option<Toggle>,
        /// Run the full 2x2 center-sampling/FPN grid.
        #[arg(long)]
        sweep: bool,
        /// Print the finer 1/2/3/>=4 breakdown used for crowded data.
        #[arg(long)]
        crowd_buckets: bool,
        #[arg(long)]
        no_resize: bool,
        #[arg(long)]
        include_crowd: bool,
        /// Verify the sweep against the published ratios.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
    },
    /// Evaluate a detection file: COCO AP/AR, miss rate, Jaccard index.
    Evaluate {
        /// Detection file (overrides data.detections).
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        /// Also write the interpolated PR curve as CSV.
        #[arg(long)]
        pr_curve: Option<PathBuf>,
    },
    /// Finite-difference check of the analytic loss gradients.
    Gradcheck {
        /// Sample points per kernel (0 = no-op success).
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Flip one analytic gradient to prove the checker catches it.
        #[arg(long, hide = true)]
        inject_flip: bool,
    },
    /// Generate synthetic annotation and detection fixtures.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Heavily overlapping single-class scenes.
        #[arg(long)]
        crowd: bool,
    },
    /// Dump the per-location assignment of one image as CSV.
    AssignDump {
        #[arg(long)]
        image_id: i64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run() -> Result<(), CliError> {
    let help = config_help();
    let matches = match Cli::command().after_help(help).try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Config(e.to_string()))?;

    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(path) = cli.annotations {
        cfg.annotations = Some(path);
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if cfg.threads > 0 {
        // Ignore the error if a global pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }

    match cli.command {
        Command::Bpr {
            mode,
            policy,
            levels,
            no_resize,
            include_crowd,
            check,
            out,
            format,
        } => commands::bpr(
            &cfg,
            mode,
            policy,
            levels,
            no_resize,
            include_crowd,
            check,
            out.as_deref(),
            format,
        ),
        Command::Ambiguity {
            center_sampling,
            fpn,
            sweep,
            crowd_buckets,
            no_resize,
            include_crowd,
            check,
            out,
            format,
        } => commands::ambiguity(
            &cfg,
            center_sampling,
            fpn,
            sweep,
            crowd_buckets,
            no_resize,
            include_crowd,
            check,
            out.as_deref(),
            format,
        ),
        Command::Evaluate {
            detections,
            out,
            format,
            pr_curve,
        } => commands::evaluate(&cfg, detections.as_deref(), out.as_deref(), format, pr_curve.as_deref()),
        Command::Gradcheck {
            samples,
            seed,
            inject_flip,
        } => commands::gradcheck(&cfg, samples, seed, inject_flip),
        Command::Synth {
            out_dir,
            scenes,
            seed,
            crowd,
        } => commands::synth(&out_dir, scenes, seed, crowd),
        Command::AssignDump { image_id, out } => {
            commands::assign_dump(&cfg, image_id, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    // Die quietly on a closed pipe (`fcos ... | head`) like other Unix
    // tools, instead of panicking in println!.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
