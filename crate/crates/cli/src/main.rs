use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use statseek_core::engine::{k_in_from_fraction, verify_trace, ExperimentConfig, RunConfig};
use statseek_core::{engine, Game, RunTrace, Verdict};

const EXIT_CONFIG: u8 = 2;
const EXIT_ABORT: u8 = 3;
const EXIT_MISMATCH: u8 = 4;

#[derive(Parser)]
#[command(name = "statseek", version, about = "Learn stationary action profiles by querying agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one learning experiment and write trace.csv and verdict.json.
    Run(Common),
    /// Average residual curves over a (beta, K_in) grid and write grid.csv.
    Sweep(Common),
    /// Repeat an experiment and write stats.json.
    Stats(Common),
    /// Re-check a recorded run against the live agents.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of replications, overriding the config.
    #[arg(long)]
    reps: Option<usize>,
    /// Maximum number of worker threads.
    #[arg(long)]
    parallel: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Recorded trace.csv.
    #[arg(long)]
    trace: PathBuf,
    /// Experiment file the trace was produced from.
    #[arg(long)]
    config: PathBuf,
    /// Recorded verdict.json; defaults to the one next to the trace.
    #[arg(long)]
    verdict: Option<PathBuf>,
}

/// Failure carrying its exit status.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STATSEEK_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Stats(args) => cmd_stats(&args),
        Command::Verify(args) => cmd_verify(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

struct Loaded {
    config: ExperimentConfig,
    run: RunConfig,
    game: Game,
}

fn load(path: &Path) -> Result<Loaded, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let bad = |e: statseek_core::Error| Failure::new(EXIT_CONFIG, anyhow::anyhow!("{}: {e}", path.display()));
    let config = ExperimentConfig::from_json(&text).map_err(bad)?;
    let run = config.run_config().map_err(bad)?;
    let game = Game::build(&config.game_spec()).map_err(bad)?;
    Ok(Loaded { config, run, game })
}

fn prepare(args: &Common) -> Result<(Loaded, PathBuf), Failure> {
    let mut loaded = load(&args.config)?;
    if let Some(seed) = args.seed {
        loaded.run.seed = seed;
    }
    if let Some(reps) = args.reps {
        loaded.config.reps = reps;
    }
    if let Some(p) = args.parallel.or(loaded.config.parallel) {
        if p == 0 {
            return Err(Failure::new(EXIT_CONFIG, anyhow::anyhow!("--parallel must be at least 1")));
        }
        // Only the first call can configure the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(p).build_global();
    }
    let out = match (&args.out, &loaded.config.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => PathBuf::from(o),
        (None, None) => {
            let stem = args.config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            PathBuf::from("out").join(stem)
        }
    };
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((loaded, out))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_trace(path: &Path, trace: &RunTrace) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    write_atomic(path, &buf)
}

fn cmd_run(args: &Common) -> CmdResult {
    let (loaded, out) = prepare(args)?;
    match engine::run(&loaded.run, &loaded.game) {
        Ok((trace, verdict)) => {
            write_trace(&out.join("trace.csv"), &trace)?;
            write_json(&out.join("verdict.json"), &verdict)?;
            info!(
                "converged={} after {} iterations, residual {:e}",
                verdict.converged, verdict.iterations_used, verdict.final_residual
            );
            println!("{}", out.join("verdict.json").display());
            Ok(0)
        }
        Err(abort) => {
            write_trace(&out.join("trace.csv"), &abort.trace)?;
            Err(Failure::new(EXIT_ABORT, abort))
        }
    }
}

fn cmd_sweep(args: &Common) -> CmdResult {
    let (loaded, out) = prepare(args)?;
    let Some(grid) = &loaded.config.sweep else {
        return Err(Failure::new(EXIT_CONFIG, anyhow::anyhow!("config has no \"sweep\" section")));
    };
    let k = loaded.run.k;
    let k_ins: Vec<usize> = grid.k_in_fraction.iter().map(|&f| k_in_from_fraction(f, k)).collect();
    let reps = args.reps.or(grid.reps).unwrap_or(loaded.config.reps);
    let cells = engine::sweep(&loaded.run, &loaded.game, &grid.beta, &k_ins, reps)
        .map_err(|e| match e {
            statseek_core::Error::InvalidInput(_) => Failure::new(EXIT_CONFIG, e),
            other => Failure::new(EXIT_ABORT, other),
        })?;
    let mut csv = String::from("beta,K_in,k,mean_residual\n");
    for cell in &cells {
        if cell.failed > 0 {
            warn!("beta={} K_in={}: {} of {reps} runs aborted", cell.beta, cell.k_in, cell.failed);
        }
        for (t, r) in cell.mean_residual.iter().enumerate() {
            csv.push_str(&format!("{},{},{},{}\n", cell.beta, cell.k_in, t + 1, r));
        }
    }
    write_atomic(&out.join("grid.csv"), csv.as_bytes())?;
    println!("{}", out.join("grid.csv").display());
    Ok(0)
}

fn cmd_stats(args: &Common) -> CmdResult {
    let (loaded, out) = prepare(args)?;
    let stats = engine::stats(&loaded.run, &loaded.game, loaded.config.reps).map_err(|e| match e {
        statseek_core::Error::InvalidInput(_) => Failure::new(EXIT_CONFIG, e),
        other => Failure::new(EXIT_ABORT, other),
    })?;
    write_json(&out.join("stats.json"), &stats)?;
    info!(
        "{}/{} converged, min lambda {:?}",
        stats.converged, stats.reps, stats.min_lambda_min
    );
    println!("{}", out.join("stats.json").display());
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> CmdResult {
    let loaded = load(&args.config)?;
    let file = fs::File::open(&args.trace).with_context(|| format!("opening {}", args.trace.display()))?;
    let trace = RunTrace::read_csv(file).map_err(|e| Failure::new(EXIT_MISMATCH, e))?;
    let verdict_path = match &args.verdict {
        Some(p) => p.clone(),
        None => args.trace.with_file_name("verdict.json"),
    };
    let text = fs::read_to_string(&verdict_path).with_context(|| format!("reading {}", verdict_path.display()))?;
    let verdict: Verdict = serde_json::from_str(&text).with_context(|| format!("parsing {}", verdict_path.display()))?;
    let report = verify_trace(&loaded.game, loaded.run.tol_conv, &trace, &verdict)
        .map_err(|e| Failure::new(EXIT_MISMATCH, e))?;
    println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?);
    Ok(if report.consistent { 0 } else { EXIT_MISMATCH })
}
