//! Experiment runner: dispatches one method over a set of properties and
//! emits one CSV row per problem.
//!
//! Rows are written in problem order regardless of completion order, and
//! bound columns are bit-identical across runs and worker counts for a
//! fixed seed.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bounds_core::bab::{self, BabConfig, BoundMethod, Property, Verdict};
use bounds_core::decomp::{self, SolverConfig, SolverMethod};
use bounds_core::djdual;
use bounds_core::domain::InputDomain;
use bounds_core::net::Network;
use bounds_core::oracle;
use bounds_core::prebounds::{
    compute_intermediate_bounds, interval_objective_bound, wk_backward_bound, PreActBounds,
};
use bounds_core::Tensor;

use crate::model_io::{load_model, load_property, LoadedProperty};
use crate::{Error, Result};

/// Bounding / verification method selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    /// Pure interval propagation.
    Ip,
    /// Backward-pass dual bound.
    Wk,
    /// Supergradient ascent on the baseline Lagrangian-relaxation dual.
    Dsg,
    /// Baseline dual solved, then re-evaluated in the decomposition dual.
    DecDsg,
    /// Supergradient ascent on the decomposition dual.
    Supergradient,
    /// Proximal (method of multipliers) solver on the decomposition dual.
    Proximal,
    /// Complete branch-and-bound verification.
    Bab,
    /// Exact optimum of the relaxation by dense simplex.
    Oracle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Ip => "ip",
            Method::Wk => "wk",
            Method::Dsg => "dsg",
            Method::DecDsg => "dec-dsg",
            Method::Supergradient => "supergradient",
            Method::Proximal => "proximal",
            Method::Bab => "bab",
            Method::Oracle => "oracle",
        };
        f.write_str(s)
    }
}

/// Everything one invocation needs; flags map onto this one-to-one.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub model: PathBuf,
    pub properties: Vec<PathBuf>,
    pub method: Method,
    pub solver: SolverConfig,
    pub bab_bound_method: BoundMethod,
    pub batch_size: usize,
    pub max_subproblems: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Dump the assembled relaxation LP of each problem (oracle method).
    pub dump_lp: Option<PathBuf>,
}

impl RunSpec {
    pub fn new(model: PathBuf, properties: Vec<PathBuf>, method: Method) -> Self {
        Self {
            model,
            properties,
            method,
            solver: SolverConfig::default(),
            bab_bound_method: BoundMethod::Supergradient,
            batch_size: 8,
            max_subproblems: 200_000,
            seed: 0,
            out: None,
            workers: None,
            dump_lp: None,
        }
    }
}

/// One emitted CSV row; columns are fixed:
/// `problem_id,method,iters,time_s,bound,verdict,subproblems`.
#[derive(Debug, Clone)]
pub struct CsvRow {
    pub problem_id: String,
    pub method: Method,
    pub iters: usize,
    pub time_s: f64,
    pub bound: f64,
    pub verdict: Option<Verdict>,
    pub subproblems: Option<u64>,
}

impl CsvRow {
    pub fn verdict_str(&self) -> &'static str {
        match &self.verdict {
            None => "",
            Some(Verdict::Robust) => "robust",
            Some(Verdict::CounterExample(_)) => "counterexample",
            Some(Verdict::Timeout) => "timeout",
        }
    }
}

pub const CSV_HEADER: &str = "problem_id,method,iters,time_s,bound,verdict,subproblems";

pub fn write_csv(rows: &[CsvRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", CSV_HEADER)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{},{},{}",
            r.problem_id,
            r.method,
            r.iters,
            r.time_s,
            r.bound,
            r.verdict_str(),
            r.subproblems.map(|s| s.to_string()).unwrap_or_default()
        )?;
    }
    Ok(())
}

fn problem_id(path: &Path, index: usize) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("problem{index}"))
}

/// A fully in-memory problem instance, for callers that skip the files.
#[derive(Debug, Clone)]
pub struct NamedProblem {
    pub id: String,
    pub network: Network,
    pub domain: InputDomain,
    pub objective: Tensor,
    pub threshold: f64,
}

/// Runs the spec: loads the model and properties, solves every problem
/// (data-parallel when built with the `parallel` feature), writes the CSV
/// when requested, and returns the rows in problem order.
pub fn run_experiment(spec: &RunSpec) -> Result<Vec<CsvRow>> {
    let net = load_model(&spec.model)?;
    let mut problems = Vec::new();
    for (i, path) in spec.properties.iter().enumerate() {
        let LoadedProperty {
            domain,
            objective,
            threshold,
        } = load_property(path)?;
        problems.push(NamedProblem {
            id: problem_id(path, i),
            network: net.clone(),
            domain,
            objective,
            threshold,
        });
    }
    let rows = run_problems(&problems, spec)?;
    if let Some(out_path) = &spec.out {
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).expect("write to memory");
        std::fs::write(out_path, buf).map_err(|source| Error::Io {
            path: out_path.clone(),
            source,
        })?;
    }
    Ok(rows)
}

/// Solves a list of in-memory problems with the spec's method settings.
pub fn run_problems(problems: &[NamedProblem], spec: &RunSpec) -> Result<Vec<CsvRow>> {
    let solve = |p: &NamedProblem| -> Result<CsvRow> {
        run_one(p, spec).map_err(|e| match e {
            Error::Run { .. } => e,
            other => other,
        })
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<CsvRow>> = {
        use rayon::prelude::*;
        problems.par_iter().map(solve).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<CsvRow>> = problems.iter().map(solve).collect();
    results.into_iter().collect()
}

fn core_err(problem: &str) -> impl FnOnce(bounds_core::Error) -> Error + '_ {
    move |source| Error::Run {
        problem: problem.to_string(),
        source,
    }
}

fn tight_bounds(p: &NamedProblem) -> Result<PreActBounds> {
    compute_intermediate_bounds(&p.network, &p.domain).map_err(core_err(&p.id))
}

fn run_one(p: &NamedProblem, spec: &RunSpec) -> Result<CsvRow> {
    let start = Instant::now();
    let mut verdict = None;
    let mut subproblems = None;
    let mut iters = spec.solver.iterations;

    let bound = match spec.method {
        Method::Ip => {
            iters = 0;
            interval_objective_bound(&p.network, &p.domain, &p.objective)
                .map_err(core_err(&p.id))?
        }
        Method::Wk => {
            iters = 0;
            let bounds = tight_bounds(p)?;
            let (b, _) = wk_backward_bound(&p.network, &p.domain, &bounds, &p.objective)
                .map_err(core_err(&p.id))?;
            b
        }
        Method::Oracle => {
            iters = 0;
            let bounds = tight_bounds(p)?;
            let (lp, _) =
                oracle::assemble_planet_lp(&p.network, &p.domain, &bounds, &p.objective)
                    .map_err(core_err(&p.id))?;
            if let Some(dir) = &spec.dump_lp {
                let path = dir.join(format!("{}.lp", p.id));
                let mut buf = Vec::new();
                lp.write_lp_format(&mut buf).expect("write to memory");
                std::fs::write(&path, buf).map_err(|source| Error::Io { path, source })?;
            }
            let (v, _) = oracle::simplex_solve(&lp).map_err(core_err(&p.id))?;
            v
        }
        Method::Dsg | Method::DecDsg => {
            let bounds = tight_bounds(p)?;
            let problem =
                decomp::BoundProblem::new(&p.network, &p.domain, &bounds, &p.objective)
                    .map_err(core_err(&p.id))?;
            let init = djdual::dsg_wk_init(&p.network, &p.domain, &bounds, &p.objective)
                .map_err(core_err(&p.id))?;
            let mut solver = spec.solver;
            solver.method = SolverMethod::Supergradient;
            let out = djdual::dsg_supergradient_solve(&problem, &solver, &init)
                .map_err(core_err(&p.id))?;
            if spec.method == Method::DecDsg {
                let (q, _) =
                    decomp::eval_q(&problem, &djdual::dec_dsg_bridge(&out.best_duals))
                        .map_err(core_err(&p.id))?;
                q
            } else {
                out.bound
            }
        }
        Method::Supergradient | Method::Proximal => {
            let bounds = tight_bounds(p)?;
            let mut solver = spec.solver;
            solver.method = if spec.method == Method::Supergradient {
                SolverMethod::Supergradient
            } else {
                SolverMethod::Proximal
            };
            decomp::solve_from_wk(&p.network, &p.domain, &bounds, &p.objective, &solver)
                .map_err(core_err(&p.id))?
                .bound
        }
        Method::Bab => {
            let prop = Property {
                network: p.network.clone(),
                domain: p.domain.clone(),
                objective: p.objective.clone(),
                threshold: p.threshold,
            };
            let mut solver = spec.solver;
            solver.method = match spec.bab_bound_method {
                BoundMethod::Proximal => SolverMethod::Proximal,
                _ => SolverMethod::Supergradient,
            };
            let config = BabConfig {
                method: spec.bab_bound_method,
                solver,
                batch_size: spec.batch_size,
                max_subproblems: spec.max_subproblems,
                seed: spec.seed,
                ..BabConfig::default()
            };
            let out = bab::verify(&prop, &config).map_err(core_err(&p.id))?;
            verdict = Some(out.verdict);
            subproblems = Some(out.subproblems);
            out.lower_bound
        }
    };

    Ok(CsvRow {
        problem_id: p.id.clone(),
        method: spec.method,
        iters,
        time_s: start.elapsed().as_secs_f64(),
        bound,
        verdict,
        subproblems,
    })
}
