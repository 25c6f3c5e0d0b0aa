//! `gsr`: command-line access to the run-length computations in `gsr-core`.

mod args;
mod commands;
mod report;

use std::fs;
use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, Format, OutputArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] gsr_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
            CliError::Io(_) => "io",
        }
    }

    /// 2 for bad input, 3 for numerical failures, 1 for i/o.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(gsr_core::Error::Argument(_) | gsr_core::Error::Domain(_)) => 2,
            CliError::Core(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

fn configure_threads() {
    let Some(n) = std::env::var("GSR_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) else {
        return;
    };
    if n > 0 {
        // fails only if a global pool already exists, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn emit(report: &report::Report, output: &OutputArgs) -> Result<(), CliError> {
    let text = match output.format {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json(),
    };
    match &output.output {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Replay(replay) => {
            let contents = fs::read_to_string(&replay.input)?;
            let recorded = report::recorded_config(&contents).map_err(CliError::Usage)?;
            let argv = std::iter::once("gsr").chain(recorded.split_whitespace());
            let inner = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(format!("recorded command: {e}")))?;
            let (report, output) = commands::run(&inner.command)?;
            let output = OutputArgs { format: output.format, output: replay.output };
            emit(&report, &output)
        }
        command => {
            let (report, output) = commands::run(&command)?;
            emit(&report, output)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    configure_threads();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::from(e.exit_code())
        }
    }
}
