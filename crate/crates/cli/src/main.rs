use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vehid::commands::{self, ThetaChoice};
use vehid::config::ExperimentConfig;
use vehid::{Error, Result};

/// Identify vehicle center-of-gravity and tire stiffness parameters from
/// noisy trajectories with simulation-based inference.
#[derive(Parser, Debug)]
#[command(name = "vehid", version)]
struct Cli {
    /// Experiment configuration (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Caps the number of simulation worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one observation trajectory.
    Simulate {
        /// `sample` (draw from the prior), `nominal`, or six comma-separated values.
        #[arg(long, default_value = "sample")]
        theta: String,
    },
    /// Fit the summary normalizer from prior-predictive simulations.
    Pilot,
    /// Sequential posterior estimation for an observation.
    Infer {
        #[arg(long)]
        observation: PathBuf,
        /// Normalizer file from `pilot`; fitted on the fly when omitted.
        #[arg(long)]
        normalizer: Option<PathBuf>,
    },
    /// Rejection ABC for an observation.
    Abc {
        #[arg(long)]
        observation: PathBuf,
        #[arg(long)]
        normalizer: Option<PathBuf>,
        #[arg(long, default_value_t = 20_000)]
        n_sims: usize,
        #[arg(long, default_value_t = 0.01)]
        accept_fraction: f64,
    },
    /// Fisher information of the summaries at a parameter point.
    Fisher {
        /// `nominal` or six comma-separated values.
        #[arg(long, default_value = "nominal")]
        theta: String,
        #[arg(long)]
        normalizer: Option<PathBuf>,
    },
    /// Posterior table and corner plot for a samples file.
    Analyze {
        #[arg(long)]
        samples: PathBuf,
        /// Six comma-separated true values, or a trajectory file whose
        /// sidecar records them.
        #[arg(long)]
        truth: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_truth(s: &str) -> Result<Vec<f64>> {
    let path = Path::new(s);
    if path.exists() {
        return commands::truth_from_observation(path)?
            .ok_or_else(|| Error::Config(format!("{s} has no metadata sidecar with a true parameter set")));
    }
    match ThetaChoice::parse(s)? {
        ThetaChoice::Fixed(v) => Ok(v),
        ThetaChoice::Nominal => Ok(vehid::vehicle::IdentifiedParams::nominal().to_array().to_vec()),
        ThetaChoice::Sample => Err(Error::Config("truth cannot be \"sample\"".into())),
    }
}

/// Runs the command; `Ok(true)` means it succeeded with a warning exit status.
fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    let out = PathBuf::from(&cfg.output_dir);
    match &cli.command {
        Command::Simulate { theta } => {
            let r = commands::cmd_simulate(&cfg, &ThetaChoice::parse(theta)?, &out)?;
            println!("{}", r.path.display());
        }
        Command::Pilot => {
            commands::cmd_pilot(&cfg, &out)?;
            println!("{}", out.join(commands::NORMALIZER_FILE).display());
        }
        Command::Infer { observation, normalizer } => {
            let r = commands::cmd_infer(&cfg, observation, normalizer.as_deref(), &out)?;
            if let Some(t) = &r.report.table {
                print!("{}", t.to_csv());
            }
        }
        Command::Abc { observation, normalizer, n_sims, accept_fraction } => {
            let (_, report) =
                commands::cmd_abc(&cfg, observation, normalizer.as_deref(), *n_sims, *accept_fraction, &out)?;
            println!("accepted {} of {} (epsilon {:.4})", report.accepted, report.n_sims, report.epsilon);
        }
        Command::Fisher { theta, normalizer } => {
            let report = commands::cmd_fisher(&cfg, &ThetaChoice::parse(theta)?, normalizer.as_deref(), &out)?;
            match report.condition_number {
                Some(c) => println!("condition number {c:.4e}"),
                None => println!("condition number infinite"),
            }
            if report.singular {
                log::warn!("Fisher information is singular within tolerance {:e}", report.singular_tol);
                return Ok(true);
            }
        }
        Command::Analyze { samples, truth } => {
            let truth = truth.as_deref().map(parse_truth).transpose()?;
            let table = commands::cmd_analyze(&cfg, samples, truth, &out)?;
            print!("{}", table.to_csv());
        }
    }
    Ok(false)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(5),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
