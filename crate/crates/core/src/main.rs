use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lowrank::burer_monteiro::{phasecut_cost, riemannian_gd, sync_cost, RgdConfig};
use lowrank::harness::{run_and_emit, Experiment, ExperimentConfig, Rank, SYNC_MAX_ITER};
use lowrank::io::{read_instance, write_instance, Instance, InstanceFile};
use lowrank::numerics::RngStream;
use lowrank::phase_retrieval::{alternating_projections, wirtinger_flow, WfConfig, AP_MAX_ITER, AP_TOL};
use lowrank::phase_sync::gpm;
use lowrank::problems::{gen_phase_retrieval, gen_sync, success, EnsembleKind, SolveReport, DEFAULT_TAU};
use lowrank::{Error, Result};

#[derive(Parser)]
#[command(name = "lowrank", version, about = "Phase retrieval, phase synchronization and Burer-Monteiro experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance as JSON.
    Gen(GenArgs),
    /// Solve an instance read from JSON and print the report.
    Solve(SolveArgs),
    /// Run a benchmark and write CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemKind {
    PhaseRetrieval,
    Sync,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "phase-retrieval")]
    problem: ProblemKind,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 96)]
    m: usize,
    #[arg(long, default_value = "complex-gaussian")]
    ensemble: EnsembleKind,
    /// Absolute noise level for synchronization instances.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Ap,
    Wf,
    Gpm,
    Bm,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(value_enum)]
    solver: Solver,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Factor rank for `bm`.
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bench {
    Fig1,
    Fig3,
    Fig5,
    Basin,
    Sync,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    experiment: Bench,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    mn_grid: Option<Vec<f64>>,
    /// Noise levels as fractions of sqrt(n / log n).
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    d_grid: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Factor ranks, e.g. `1,2,ref`.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<Rank>>,
    #[arg(long, value_delimiter = ',')]
    ensemble: Option<Vec<EnsembleKind>>,
    #[arg(long)]
    tau: Option<f64>,
    /// Add the PhaseCut reference curve to fig1.
    #[arg(long)]
    reference: bool,
    /// Leave-one-out updates recorded by `sync` (0 disables).
    #[arg(long)]
    loo_iterations: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl BenchArgs {
    fn into_config(self) -> ExperimentConfig {
        let experiment = match self.experiment {
            Bench::Fig1 => Experiment::Fig1,
            Bench::Fig3 => Experiment::Fig3,
            Bench::Fig5 => Experiment::Fig5,
            Bench::Basin => Experiment::Basin,
            Bench::Sync => Experiment::Sync,
        };
        let d = ExperimentConfig::defaults(experiment);
        ExperimentConfig {
            n: self.n.unwrap_or(d.n),
            m: self.m.unwrap_or(d.m),
            mn_grid: self.mn_grid.unwrap_or(d.mn_grid),
            sigma_grid: self.sigma.unwrap_or(d.sigma_grid),
            d_grid: self.d_grid.unwrap_or(d.d_grid),
            trials: self.trials.unwrap_or(d.trials),
            pairs: self.pairs.unwrap_or(d.pairs),
            grid: self.grid.unwrap_or(d.grid),
            seed: self.seed,
            ensembles: self.ensemble.unwrap_or(d.ensembles),
            ranks: self.p.unwrap_or(d.ranks),
            tau: self.tau.unwrap_or(d.tau),
            reference: self.reference,
            loo_iterations: self.loo_iterations.unwrap_or(d.loo_iterations),
            out: self.out,
            experiment,
        }
    }
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    solver: &'static str,
    success: Option<bool>,
    report: &'a SolveReport,
}

fn wrong_problem(solver: &str) -> Error {
    Error::Config(format!("solver '{solver}' does not accept this problem type"))
}

fn solve(args: SolveArgs) -> Result<()> {
    let instance = read_instance(&args.input)?;
    let mut rng = RngStream::new(args.seed);
    let (name, report) = match (args.solver, instance) {
        (Solver::Ap, Instance::PhaseRetrieval(inst)) => {
            ("ap", alternating_projections(&inst, &mut rng, AP_MAX_ITER, AP_TOL)?)
        }
        (Solver::Wf, Instance::PhaseRetrieval(inst)) => ("wf", wirtinger_flow(&inst, &WfConfig::default())?),
        (Solver::Gpm, Instance::Sync(inst)) => {
            let tol = 1e-12 * (inst.n() as f64).sqrt();
            ("gpm", gpm(&inst, SYNC_MAX_ITER, tol)?.report)
        }
        (Solver::Bm, inst) => {
            let sdp = match inst {
                Instance::PhaseRetrieval(pr) => phasecut_cost(&pr)?,
                Instance::Sync(s) => sync_cost(&s),
                Instance::Sdp(sdp) => sdp,
            };
            ("bm", riemannian_gd(&sdp, args.p, &mut rng, &RgdConfig::default())?.1)
        }
        (Solver::Ap, _) => return Err(wrong_problem("ap")),
        (Solver::Wf, _) => return Err(wrong_problem("wf")),
        (Solver::Gpm, _) => return Err(wrong_problem("gpm")),
    };
    let output = SolveOutput {
        solver: name,
        success: success(&report, args.tau).ok(),
        report: &report,
    };
    let text = serde_json::to_string_pretty(&output)?;
    match args.out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn generate(args: GenArgs) -> Result<()> {
    let mut rng = RngStream::new(args.seed);
    let doc = match args.problem {
        ProblemKind::PhaseRetrieval => {
            InstanceFile::from(&gen_phase_retrieval(args.n, args.m, args.ensemble, &mut rng)?)
        }
        ProblemKind::Sync => InstanceFile::from(&gen_sync(args.n, args.sigma, &mut rng)?),
    };
    match args.out {
        Some(path) => write_instance(&path, &doc),
        None => {
            println!("{}", lowrank::io::to_json(&doc)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => generate(args),
        Command::Solve(args) => solve(args),
        Command::Bench(args) => run_and_emit(&args.into_config()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
