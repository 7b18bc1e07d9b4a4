use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use constlab::report::{write_outputs, windows_csv};
use constlab::scenario::Scenario;
use constlab::sim::{SimError, Simulation};
use constlab::{competition_loss, cohens_kappa, ActorId, ConfusionMatrix};

const EXIT_OTHER: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "constlab", version, about = "Satellite constellation simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its artifacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Simulated end time in seconds.
        #[arg(long)]
        until: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print contact windows for one pair as CSV.
    Windows {
        #[arg(long)]
        scenario: PathBuf,
        /// Two actor ids, e.g. `1,10`.
        #[arg(long)]
        pair: String,
        /// Start and end seconds, e.g. `0,86400`.
        #[arg(long)]
        span: String,
    },
    /// Print Cohen's kappa and the loss 1 - kappa for a confusion matrix CSV.
    Score {
        #[arg(long)]
        matrix: PathBuf,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn invalid(msg: impl ToString) -> Self {
        Self {
            code: EXIT_INVALID,
            msg: msg.to_string(),
        }
    }

    fn other(msg: impl ToString) -> Self {
        Self {
            code: EXIT_OTHER,
            msg: msg.to_string(),
        }
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Config(_) => Failure::invalid(e),
        SimError::Divergence { .. } => Failure {
            code: EXIT_DIVERGED,
            msg: e.to_string(),
        },
        other => Failure::other(other),
    }
}

fn two<T: std::str::FromStr>(s: &str, what: &str) -> Result<(T, T), Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(Failure::invalid(format!("--{what}: cannot parse {s:?}"))),
        },
        _ => Err(Failure::invalid(format!("--{what}: expected two comma-separated values, got {s:?}"))),
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<(Scenario, Simulation), Failure> {
    let sc = Scenario::load(path).map_err(Failure::invalid)?;
    let cfg = sc
        .to_config(seed)
        .map_err(|errs| Failure::invalid(format!("{}: invalid scenario:\n  {}", path.display(), errs.join("\n  "))))?;
    let sim = Simulation::new(cfg).map_err(sim_failure)?;
    Ok((sc, sim))
}

fn run(scenario: PathBuf, until: f64, seed: Option<u64>, out: PathBuf) -> Result<(), Failure> {
    if !(until >= 0.0 && until.is_finite()) {
        return Err(Failure::invalid(format!("--until must be a non-negative number, got {until}")));
    }
    let (sc, mut sim) = load(&scenario, seed)?;
    let seed = seed.unwrap_or(sc.metadata.seed);
    log::info!("running {:?} to t={until} s with seed {seed}", sc.metadata.name);
    let outcome = sim.advance_to(until);
    // artifacts are written even when the run stops early
    let written = write_outputs(&sim, &out, &sc.output, &sc.metadata.name, seed)
        .map_err(|e| Failure::other(format!("{}: {e}", out.display())))?;
    for p in &written {
        log::info!("wrote {}", p.display());
    }
    outcome.map(|_| ()).map_err(sim_failure)
}

fn windows(scenario: PathBuf, pair: String, span: String) -> Result<(), Failure> {
    let (a, b): (u32, u32) = two(&pair, "pair")?;
    let span: (f64, f64) = two(&span, "span")?;
    let (_, sim) = load(&scenario, None)?;
    let ws = sim
        .pair_windows(ActorId(a), ActorId(b), span)
        .map_err(Failure::invalid)?;
    let bytes = windows_csv(&ws).map_err(Failure::other)?;
    std::io::stdout().write_all(&bytes).map_err(Failure::other)
}

fn score(matrix: PathBuf) -> Result<(), Failure> {
    let file = File::open(&matrix).map_err(|e| Failure::invalid(format!("{}: {e}", matrix.display())))?;
    let m = ConfusionMatrix::read_csv(file).map_err(|e| Failure::invalid(format!("{}: {e}", matrix.display())))?;
    let kappa: f64 = cohens_kappa(&m).map_err(|e| Failure::invalid(format!("{}: {e}", matrix.display())))?;
    let loss: f64 = competition_loss(&m).map_err(|e| Failure::invalid(format!("{}: {e}", matrix.display())))?;
    println!("kappa={kappa:.6} L={loss:.6}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONSTLAB_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { scenario, until, seed, out } => run(scenario, until, seed, out),
        Cmd::Windows { scenario, pair, span } => windows(scenario, pair, span),
        Cmd::Score { matrix } => score(matrix),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
