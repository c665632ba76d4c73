//! `markabs`: batch runs of density propagation, invariance and chain export.

mod config;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use markabs_core::export::{self, DEFAULT_TRA_THRESHOLD};

use crate::config::Experiment;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) | CliError::Output(_) => 2,
        }
    }
}

impl From<markabs_core::Error> for CliError {
    fn from(e: markabs_core::Error) -> Self {
        use markabs_core::Error as E;
        match e {
            E::InvalidParameter(_)
            | E::DimensionMismatch { .. }
            | E::MissingConstant(_)
            | E::Unsupported(_)
            | E::TooManyCells { .. }
            | E::SingularMatrix(_)
            | E::Parse(_)
            | E::Csv(_) => CliError::Config(e.to_string()),
            E::Io(_) => CliError::Output(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "markabs",
    version,
    about = "Finite-state abstraction of continuous-state Markov processes"
)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, env = "MARKABS_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Convert a dense chain CSV to another format.
    Export {
        chain: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Tra)]
        format: Format,
        /// Output directory (defaults to the chain file's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Smallest probability written to `.tra`.
        #[arg(long, default_value_t = DEFAULT_TRA_THRESHOLD)]
        threshold: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Tra,
    Csv,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config } => {
            let exp = Experiment::load(&config)?;
            for f in tasks::run(&exp)? {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let exp = Experiment::load(&config)?;
            println!(
                "ok: task {}, {} (lambda_f = {}, m_f = {}{}), config sha256 {}",
                exp.config.task.name(),
                exp.kernel.label(),
                exp.kernel.lambda_f(),
                exp.kernel.m_f(),
                if exp.kernel.m_f_certified() {
                    ""
                } else {
                    ", uncertified"
                },
                exp.sha256
            );
            Ok(())
        }
        Command::Export {
            chain,
            format,
            out,
            threshold,
        } => export_file(&chain, format, out, threshold),
    }
}

fn export_file(chain: &PathBuf, format: Format, out: Option<PathBuf>, threshold: f64) -> Result<(), CliError> {
    let file =
        std::fs::File::open(chain).map_err(|e| CliError::Config(format!("cannot read {}: {e}", chain.display())))?;
    let parsed = export::read_chain_csv(file)?;
    // validates shape, row sums and the sink
    let abstraction = parsed.to_abstraction()?;
    let dir = out.unwrap_or_else(|| chain.parent().map(PathBuf::from).unwrap_or_default());
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Output(format!("cannot create {}: {e}", dir.display())))?;
    let stem = chain.file_stem().and_then(|s| s.to_str()).unwrap_or("chain");
    let written = match format {
        Format::Tra => tasks::write_tra_files(
            &dir,
            stem,
            abstraction.matrix(),
            abstraction.size(),
            &parsed.header,
            threshold,
        )?,
        Format::Csv => {
            let path = dir.join(format!("{stem}.dense.csv"));
            let mut w = std::fs::File::create(&path)
                .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))?;
            let own = export::chain_header(&abstraction);
            let extra: Vec<(String, String)> = parsed
                .header
                .iter()
                .filter(|(k, _)| !own.iter().any(|(c, _)| c == k))
                .cloned()
                .collect();
            export::write_chain_csv(&mut w, &abstraction, &extra)?;
            vec![path]
        }
    };
    for f in written {
        println!("wrote {}", f.display());
    }
    Ok(())
}
