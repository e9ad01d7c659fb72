mod commands;
mod config;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use delaysync_core::sdp::SolverOptions;

use commands::Run;
use config::{Config, Method};
use error::{CliError, EXIT_OK};
use output::{OutDir, RunManifest, SolverSettings};

#[derive(Parser)]
#[command(name = "delaysync", version, about = "Delay-robust synchronization of leader-follower networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Largest delay bound certified for the configured gain.
    DelayBound(Common),
    /// Estimate of the delay-dependent synchronizing region.
    Dsr(Common),
    /// Controller synthesis; writes design.json.
    Design(Common),
    /// Closed-loop simulation; writes trajectory CSV and SVG.
    Simulate(Common),
    /// Certified delay bound against the spectral delay margin.
    Audit(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for parallel solves (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Grid step of the region trace.
    #[arg(long)]
    delta: Option<f64>,
    /// Bisection width of the delay searches.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Single simulation delay; replaces any configured sweep.
    #[arg(long)]
    tau: Option<f64>,
    /// Seed for random agent initial states.
    #[arg(long)]
    seed: Option<u64>,
    /// Design file whose gain replaces `analysis.gain`.
    #[arg(long)]
    design: Option<PathBuf>,
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::DelayBound(c) => ("delay-bound", c),
            Command::Dsr(c) => ("dsr", c),
            Command::Design(c) => ("design", c),
            Command::Simulate(c) => ("simulate", c),
            Command::Audit(c) => ("audit", c),
        }
    }
}

fn apply_overrides(cfg: &mut Config, a: &Common) {
    if let Some(d) = a.delta {
        cfg.analysis.delta = d;
        cfg.design.delta = Some(d);
    }
    if let Some(t) = a.tolerance {
        cfg.analysis.tolerance = t;
    }
    if let Some(e) = a.epsilon {
        cfg.design.epsilon = e;
    }
    if let Some(m) = a.method {
        cfg.design.method = m;
    }
    if let Some(t) = a.tau {
        cfg.simulation.tau = Some(t);
        cfg.simulation.tau_sweep.clear();
    }
    if let Some(s) = a.seed {
        cfg.simulation.seed = s;
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, args) = cli.command.parts();
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());

    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be >= 1");
            return ExitCode::from(error::EXIT_VALIDATION as u8);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let jobs = rayon::current_num_threads();

    let out = match OutDir::create(&args.out_dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let opts = SolverOptions::default();
    let (config, mut out, result) = match Config::load(&args.config) {
        Ok(mut config) => {
            apply_overrides(&mut config, args);
            let mut run = Run { config, out, opts, design_path: args.design.clone() };
            let result = match &cli.command {
                Command::DelayBound(_) => commands::delay_bound(&mut run),
                Command::Dsr(_) => commands::dsr(&mut run),
                Command::Design(_) => commands::design(&mut run),
                Command::Simulate(_) => commands::simulate_cmd(&mut run),
                Command::Audit(_) => commands::audit(&mut run),
            };
            (Some(run.config), run.out, result)
        }
        Err(e) => (None, out, Err(e)),
    };
    let (status, code) = match &result {
        Ok(s) => (s.clone(), EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            (e.to_string(), e.exit_code())
        }
    };

    let seed = config.as_ref().map_or(0, |c| c.simulation.seed);
    let manifest = RunManifest {
        command: name.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config,
        solver: SolverSettings {
            margin_rel: opts.margin_rel,
            tol: opts.tol,
            max_iter: opts.max_iter,
            free_bound: opts.free_bound,
            early_stop: opts.early_stop,
        },
        jobs,
        seed,
        status,
        exit_code: code,
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: out.written().to_vec(),
    };
    let code = match serde_json::to_string_pretty(&manifest)
        .map_err(CliError::from)
        .and_then(|text| out.write("manifest.json", &text).map(|_| ()))
    {
        Ok(()) => code,
        Err(e) => {
            eprintln!("error: manifest: {e}");
            if code == EXIT_OK {
                e.exit_code()
            } else {
                code
            }
        }
    };
    ExitCode::from(code as u8)
}
