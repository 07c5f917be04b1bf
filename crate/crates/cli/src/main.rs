use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use insight_cli::server::{serve, AppState};
use insight_cli::{commands, CliError};

#[derive(Parser)]
#[command(name = "insight", version, about = "Patient-data insight pipeline")]
struct Cli {
    /// Pipeline config file (TOML), merged over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Deterministic,
    External,
}

impl Backend {
    fn as_str(self) -> &'static str {
        match self {
            Backend::Deterministic => "deterministic",
            Backend::External => "external",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline for one patient and write its bundle.
    Run {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        patient: String,
        /// Session index (1-based); defaults to the latest.
        #[arg(long)]
        session: Option<usize>,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a patient directory or a bundle file.
    Validate { path: PathBuf },
    /// Serve stored bundles over HTTP.
    Serve {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
    },
    /// Generate a simulated patient.
    Datagen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        days: Option<u32>,
        /// JSON injection spec; overrides the built-in example.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Invalid { violations, .. } = &e {
                for v in violations {
                    eprintln!("  {v}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Run {
            data_dir,
            patient,
            session,
            backend,
            out,
        } => {
            let (config, composer) =
                commands::load_config(config_path, backend.map(Backend::as_str))?;
            let output = commands::run(
                &data_dir,
                &patient,
                session,
                &config,
                &composer,
                out.as_deref(),
            )?;
            print!("{}", output.report());
        }
        Command::Validate { path } => {
            let (config, _) = commands::load_config(config_path, Some("deterministic"))?;
            println!("{}", commands::validate(&path, &config)?);
        }
        Command::Serve {
            data_dir,
            listen,
            backend,
        } => {
            let (config, composer) =
                commands::load_config(config_path, backend.map(Backend::as_str))?;
            let root = data_dir.unwrap_or_else(|| PathBuf::from(&config.server.data_root));
            let listen = listen.unwrap_or_else(|| config.server.listen.clone());
            let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
                path: root.clone(),
                source,
            })?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(&listen)
                    .await
                    .map_err(|source| CliError::Io {
                        path: PathBuf::from(&listen),
                        source,
                    })?;
                eprintln!("serving {} on http://{listen}", root.display());
                serve(listener, AppState::new(root.clone(), config, composer))
                    .await
                    .map_err(|source| CliError::Io { path: root, source })
            })?;
        }
        Command::Datagen {
            seed,
            days,
            spec,
            out,
        } => {
            let (config, _) = commands::load_config(config_path, Some("deterministic"))?;
            let (dir, manifest) = commands::datagen(seed, days, spec.as_deref(), &out, &config)?;
            println!(
                "{} ({} expected facts)",
                dir.display(),
                manifest.expected.len()
            );
        }
    }
    Ok(())
}
