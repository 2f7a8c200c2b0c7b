mod config;
mod manifest;
mod plotdata;
mod scenarios;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ScenarioConfig;
use crate::manifest::{OutputDir, MANIFEST_NAME};

#[derive(Parser)]
#[command(name = "avq", version, about = "Adaptive variational dynamics scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a TOML config and write a manifest.
    Run { config: PathBuf },
    /// Build plot-ready bundles from a manifest.
    Plotdata { manifest: PathBuf },
    /// Print operator-pool sizes for the registers listed in a config.
    AuditPools { config: PathBuf },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_COMPUTE: u8 = 2;
const EXIT_IO: u8 = 3;

fn load(path: &PathBuf) -> Result<ScenarioConfig, ExitCode> {
    ScenarioConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn run(path: &PathBuf) -> ExitCode {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    let mut out = match OutputDir::create(&cfg.output_dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", cfg.output_dir.display());
            return ExitCode::from(EXIT_IO);
        }
    };
    let result = pool.install(|| scenarios::run(&cfg, &mut out));
    let root = out.root().to_path_buf();
    let error = result.as_ref().err().map(|e| e.to_string());
    if let Err(e) = out.finish(&cfg, error) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(EXIT_IO);
    }
    let manifest = root.join(MANIFEST_NAME);
    match result {
        Ok(()) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(scenarios::RunError::Io(e)) => {
            eprintln!("error: {e}; partial manifest at {}", manifest.display());
            ExitCode::from(EXIT_IO)
        }
        Err(e) => {
            eprintln!("error: {e}; partial manifest at {}", manifest.display());
            ExitCode::from(EXIT_COMPUTE)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => run(&config),
        Command::Plotdata { manifest } => match plotdata::emit(&manifest) {
            Ok(warnings) => {
                for w in warnings {
                    eprintln!("warning: {w}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", manifest.display());
                ExitCode::from(EXIT_IO)
            }
        },
        Command::AuditPools { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match scenarios::pools_table(&cfg) {
                Ok(t) => {
                    print!("{t}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_COMPUTE)
                }
            }
        }
    }
}
