use clap::{Parser, Subcommand};
use planelike::cli::{self, ExperimentConfig, RunError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "planelike", version, about = "Planelike minimizers of nonlocal phase-transition energies")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for report.json and the CSV tables.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of the randomized checks (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    Planelike,
    Scaling,
    Barrier,
    Gamma,
    Perimeter,
    /// Check the hypotheses only.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Planelike => "planelike",
            Command::Scaling => "scaling",
            Command::Barrier => "barrier",
            Command::Gamma => "gamma",
            Command::Perimeter => "perimeter",
            Command::Validate => "validate",
        }
    }
}

fn execute(args: &Args) -> Result<bool, RunError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| RunError::Rejected { tag: "config".into(), msg: format!("{}: {e}", path.display()) })?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(k) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().map_err(|e| RunError::Runtime(e.to_string()))?;
    }
    let out = args.out.clone().or_else(|| cfg.out.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let bundle = cli::run(args.command.name(), &cfg)?;
    bundle.write(&out)?;
    println!("{}: {} ({})", args.command.name(), if bundle.pass { "pass" } else { "FAIL" }, out.join("report.json").display());
    Ok(bundle.pass)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
