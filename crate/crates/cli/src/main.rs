//! `bounds`: compute output bounds for a network over an input domain, or
//! verify a property completely with branch and bound.
//!
//! Exit codes: 0 on success, 2 when branch-and-bound finds a
//! counterexample, 1 on any error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use bounds_cli::runner::{run_experiment, write_csv, Method, RunSpec};
use bounds_core::bab::{BoundMethod, Verdict};
use bounds_core::decomp::SolverConfig;

#[derive(Parser, Debug)]
#[command(
    name = "bounds",
    about = "Anytime output bounds and complete verification for feedforward networks"
)]
struct Args {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,

    /// Property file (JSON); repeat for several problems.
    #[arg(long = "property", required = true)]
    properties: Vec<PathBuf>,

    /// Bounding / verification method.
    #[arg(long, value_enum)]
    method: Method,

    /// Iteration budget for the iterative methods.
    #[arg(long, default_value_t = 200)]
    iters: usize,

    /// Initial step size of the supergradient methods.
    #[arg(long, default_value_t = 1e-2)]
    alpha_start: f64,

    /// Final step size of the supergradient methods (linear decay).
    #[arg(long, default_value_t = 1e-4)]
    alpha_end: f64,

    /// Initial proximal weight.
    #[arg(long, default_value_t = 10.0)]
    eta_start: f64,

    /// Final proximal weight (linear growth).
    #[arg(long, default_value_t = 500.0)]
    eta_end: f64,

    /// Momentum coefficient of the proximal dual updates.
    #[arg(long, default_value_t = 0.3)]
    momentum: f64,

    /// Inner Frank-Wolfe passes per proximal outer iteration.
    #[arg(long, default_value_t = 2)]
    inner_iters: usize,

    /// Bounding method used inside branch and bound.
    #[arg(long, value_enum, default_value = "supergradient")]
    bab_method: BabBoundArg,

    /// Subproblems bounded per branch-and-bound batch.
    #[arg(long, default_value_t = 8)]
    batch_size: usize,

    /// Branch-and-bound subproblem budget.
    #[arg(long, default_value_t = 200_000)]
    max_subproblems: usize,

    /// RNG seed (branch-and-bound incumbent sampling).
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads for data-parallel sections (default: all cores).
    #[arg(long)]
    workers: Option<usize>,

    /// Directory to dump each problem's relaxation LP in text form
    /// (oracle method only).
    #[arg(long)]
    dump_lp: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum BabBoundArg {
    Ip,
    Wk,
    Dsg,
    DecDsg,
    Supergradient,
    Proximal,
}

impl From<BabBoundArg> for BoundMethod {
    fn from(a: BabBoundArg) -> Self {
        match a {
            BabBoundArg::Ip => BoundMethod::Ip,
            BabBoundArg::Wk => BoundMethod::Wk,
            BabBoundArg::Dsg => BoundMethod::Dsg,
            BabBoundArg::DecDsg => BoundMethod::DecDsg,
            BabBoundArg::Supergradient => BoundMethod::Supergradient,
            BabBoundArg::Proximal => BoundMethod::Proximal,
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();

    #[cfg(feature = "parallel")]
    if let Some(workers) = args.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("bounds: failed to size worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    #[cfg(not(feature = "parallel"))]
    if args.workers.is_some() {
        eprintln!("bounds: built without the `parallel` feature; --workers ignored");
    }

    let spec = RunSpec {
        model: args.model,
        properties: args.properties,
        method: args.method,
        solver: SolverConfig {
            iterations: args.iters,
            step_size_start: args.alpha_start,
            step_size_end: args.alpha_end,
            eta_start: args.eta_start,
            eta_end: args.eta_end,
            momentum: args.momentum,
            inner_iterations: args.inner_iters,
            ..SolverConfig::default()
        },
        bab_bound_method: args.bab_method.into(),
        batch_size: args.batch_size,
        max_subproblems: args.max_subproblems,
        seed: args.seed,
        out: args.out,
        workers: args.workers,
        dump_lp: args.dump_lp,
    };

    match run_experiment(&spec) {
        Ok(rows) => {
            if spec.out.is_none() {
                let mut stdout = std::io::stdout().lock();
                if write_csv(&rows, &mut stdout).is_err() {
                    return ExitCode::from(1);
                }
            }
            let found_cex = rows
                .iter()
                .any(|r| matches!(r.verdict, Some(Verdict::CounterExample(_))));
            if found_cex {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("bounds: {e}");
            ExitCode::from(1)
        }
    }
}
