use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cocycle_cli::config::ExperimentConfig;
use cocycle_cli::{inspect, pipeline, presets, verify, RunError};

/// Stationary points, Lyapunov spectra and local invariant manifolds of
/// Galerkin-truncated stochastic evolution equations.
#[derive(Parser)]
#[command(name = "cocycle", version)]
struct Cli {
    /// Size of the worker thread pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured pipeline and write artifacts.
    Run(Source),
    /// Run the numerical self-checks for a configuration.
    Verify(Source),
    /// List the built-in configurations, or print one.
    Presets {
        /// Print this preset's configuration.
        name: Option<String>,
    },
    /// Summarize an artifact file or an artifact directory.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct Source {
    /// Configuration file. Without this or `--preset`, the default preset runs.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration name.
    #[arg(long)]
    preset: Option<String>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Source {
    fn load(&self) -> Result<ExperimentConfig, RunError> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(|e| RunError::io(format!("{}: {e}", path.display())))?;
                ExperimentConfig::parse(&text)?
            }
            (None, Some(name)) => presets::load(name)?,
            (None, None) => presets::load(presets::DEFAULT)?,
        };
        if let Some(seed) = self.seed {
            config.run.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.to_string_lossy().into_owned();
        }
        Ok(config)
    }
}

fn execute(cli: Cli) -> Result<(), RunError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(RunError::io)?;
    }
    let mut stdout = std::io::stdout();
    match cli.command {
        Command::Run(src) => {
            let config = src.load()?;
            let out = PathBuf::from(&config.output.dir);
            let outcome = pipeline::run_pipeline(&config, &out, &mut stdout)?;
            let _ = writeln!(stdout, "artifacts: {}", outcome.dir.display());
            let _ = writeln!(stdout, "manifest sha256: {}", outcome.manifest.digest());
        }
        Command::Verify(src) => {
            let config = src.load()?;
            let report = verify::run_verify(&config)?;
            let _ = write!(stdout, "{}", report.table());
            let failed = report.failures();
            if failed > 0 {
                return Err(RunError::VerifyFailed(failed));
            }
        }
        Command::Presets { name: None } => {
            for p in presets::ALL {
                let _ = writeln!(stdout, "{:<16} {}", p.name, p.description);
            }
        }
        Command::Presets { name: Some(name) } => {
            let config = presets::load(&name)?;
            let _ = write!(stdout, "{}", config.to_toml());
        }
        Command::Inspect { path } => {
            let _ = write!(stdout, "{}", inspect::inspect(&path)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
