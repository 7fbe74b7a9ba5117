//! Lagrangian decomposition of the activation-hull relaxation: the dual
//! function, its inner minimization in closed form, a supergradient solver
//! and a proximal solver with Frank-Wolfe inner steps, Gauss-Seidel block
//! updates and momentum.
//!
//! The relaxed problem is split into one subproblem per layer by giving
//! each constraint group its own copy of the shared variables and
//! dualizing only the copy-agreement constraints. Evaluating the dual at
//! any multiplier therefore costs a forward/adjoint sweep and yields a
//! valid lower bound at any time.

use crate::domain::InputDomain;
use crate::hulls::{
    min_linear_interval, relu_vertex_min, sigmoid_hull_build, sigmoid_piece_min, PieceKind,
    ReluState,
};
use crate::net::{sigmoid, Activation, Network};
use crate::opt::{schedule, AdamState};
use crate::prebounds::{PreActBounds, WkState};
use crate::{par, Error, Result, Tensor};

/// Ambiguous intervals narrower than this are handled by the linear box
/// rule instead of the chord (which would divide by the width).
const DEGENERATE_WIDTH: f64 = 1e-9;

/// One bound computation: a network, an input domain, intermediate bounds
/// and the objective row whose minimum over the relaxation is bounded.
#[derive(Clone, Copy)]
pub struct BoundProblem<'a> {
    pub net: &'a Network,
    pub dom: &'a InputDomain,
    pub bounds: &'a PreActBounds,
    pub objective: &'a Tensor,
}

impl<'a> BoundProblem<'a> {
    pub fn new(
        net: &'a Network,
        dom: &'a InputDomain,
        bounds: &'a PreActBounds,
        objective: &'a Tensor,
    ) -> Result<Self> {
        bounds.validate(net)?;
        objective.expect_len(net.output_dim(), "objective")?;
        if dom.dim() != net.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "domain".into(),
                expected: vec![net.input_dim()],
                got: vec![dom.dim()],
            });
        }
        Ok(Self {
            net,
            dom,
            bounds,
            objective,
        })
    }

    fn neg_objective(&self) -> Tensor {
        let mut t = self.objective.flattened();
        for v in t.data_mut() {
            *v = -*v;
        }
        t
    }

    /// Dual vector attached to hidden layer `k`, with the convention that
    /// the slot past the last hidden layer holds the fixed `-objective`.
    fn rho_eff(&self, duals: &DecompDuals, k: usize) -> Tensor {
        if k < duals.rho.len() {
            duals.rho[k].clone()
        } else {
            self.neg_objective()
        }
    }
}

/// Per-layer multipliers of the copy-agreement constraints. The multiplier
/// for the output layer is pinned to `-objective` and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompDuals {
    pub rho: Vec<Tensor>,
}

impl DecompDuals {
    pub fn zeros(net: &Network) -> Self {
        Self {
            rho: (0..net.num_hidden())
                .map(|k| Tensor::zeros(vec![net.layer_width(k)]))
                .collect(),
        }
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.rho.len() != net.num_hidden() {
            return Err(Error::ShapeMismatch {
                context: "duals".into(),
                expected: vec![net.num_hidden()],
                got: vec![self.rho.len()],
            });
        }
        for (k, r) in self.rho.iter().enumerate() {
            r.expect_len(net.layer_width(k), "duals layer")?;
        }
        Ok(())
    }
}

/// Copies of the primal variables, one set per subproblem: `pre_a[k]` is
/// the pre-activation produced by affine layer `k` in its consumer
/// subproblem, `pre_b[k]`/`post[k]` are the hidden-layer copies.
#[derive(Debug, Clone)]
pub struct PrimalCopies {
    pub z0: Tensor,
    pub pre_a: Vec<Tensor>,
    pub pre_b: Vec<Tensor>,
    pub post: Vec<Tensor>,
}

impl PrimalCopies {
    /// Residuals of the copy-agreement constraints, `pre_b - pre_a`.
    pub fn residuals(&self) -> Vec<Tensor> {
        self.pre_b
            .iter()
            .zip(&self.pre_a)
            .map(|(b, a)| b.sub(a))
            .collect()
    }
}

/// Dual-solver configuration; iteration semantics depend on the method
/// (dual updates for supergradient, outer iterations for proximal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub iterations: usize,
    pub step_size_start: f64,
    pub step_size_end: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub eta_start: f64,
    pub eta_end: f64,
    pub momentum: f64,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    Supergradient,
    Proximal,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Supergradient,
            iterations: 200,
            step_size_start: 1e-2,
            step_size_end: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            eta_start: 10.0,
            eta_end: 500.0,
            momentum: 0.3,
            inner_iterations: 2,
        }
    }
}

impl SolverConfig {
    pub fn supergradient(iterations: usize) -> Self {
        Self {
            method: SolverMethod::Supergradient,
            iterations,
            ..Self::default()
        }
    }

    pub fn proximal(iterations: usize) -> Self {
        Self {
            method: SolverMethod::Proximal,
            iterations,
            ..Self::default()
        }
    }
}

/// Result of a dual solve: the best bound seen, the final multipliers for
/// warm starts, and the bound after every evaluation (the anytime curve).
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub bound: f64,
    pub duals: DecompDuals,
    pub trace: Vec<f64>,
}

/// Minimizer of the input subproblem: picks the input that minimizes the
/// linearized objective `-rho1 . (W0 z + b0)` over the domain, then maps
/// it through the first layer.
pub fn inner_min_p0(problem: &BoundProblem, rho1: &Tensor) -> Result<(Tensor, Tensor)> {
    let w0 = problem.net.affine(0).adjoint(rho1)?;
    let coeff = {
        let mut t = w0;
        for v in t.data_mut() {
            *v = -*v;
        }
        t
    };
    let (z0, _) = problem.dom.minimize_linear(&coeff);
    let pre = problem.net.affine(0).forward(&z0)?;
    Ok((z0, pre.flattened()))
}

/// Solution of one hidden-layer subproblem.
#[derive(Debug, Clone)]
pub struct PkSolution {
    pub pre_b: Tensor,
    pub post: Tensor,
    pub pre_a_next: Tensor,
    /// Subproblem objective `rho_k . pre_b - rho_next . pre_a_next`.
    pub value: f64,
}

/// Closed-form minimizer of the hidden-layer subproblem `k`: propagates
/// the next multiplier backwards once, then solves each neuron's hull
/// problem independently.
pub fn inner_min_pk(
    problem: &BoundProblem,
    k: usize,
    rho_k: &Tensor,
    rho_next: &Tensor,
) -> Result<PkSolution> {
    let net = problem.net;
    if k >= net.num_hidden() {
        return Err(Error::MissingBounds(k));
    }
    let (lb, ub) = problem.bounds.layer(k);
    let w = net.affine(k + 1).adjoint(rho_next)?;
    let act = net.activation(k);
    let width = net.layer_width(k);
    rho_k.expect_len(width, "inner_min_pk duals")?;

    let mut pre_b = Vec::with_capacity(width);
    let mut post = Vec::with_capacity(width);
    for j in 0..width {
        let (zhat, z) = cell_min(act, rho_k[j], w[j], lb[j], ub[j]);
        pre_b.push(zhat);
        post.push(z);
    }
    let pre_b = Tensor::vector(pre_b);
    let post = Tensor::vector(post);
    let pre_a_next = net.affine(k + 1).forward(&post)?.flattened();
    let value = rho_k.dot(&pre_b) - rho_next.dot(&pre_a_next);
    Ok(PkSolution {
        pre_b,
        post,
        pre_a_next,
        value,
    })
}

/// Per-neuron minimum of `rho * zhat - w * z` over the activation hull on
/// `[l, u]`; returns the minimizing `(zhat, z)`.
fn cell_min(act: Activation, rho: f64, w: f64, l: f64, u: f64) -> (f64, f64) {
    match act {
        Activation::Relu => {
            if u - l < DEGENERATE_WIDTH {
                return if l >= 0.0 {
                    let (zhat, _) = min_linear_interval(rho - w, l, u);
                    (zhat, zhat)
                } else {
                    (0.5 * (l + u), 0.0)
                };
            }
            match ReluState::from_bounds(l, u) {
                ReluState::Blocked => {
                    let (zhat, _) = min_linear_interval(rho, l, u);
                    (zhat, 0.0)
                }
                ReluState::Passing => {
                    let (zhat, _) = min_linear_interval(rho - w, l, u);
                    (zhat, zhat)
                }
                ReluState::Ambiguous => {
                    let a = rho - w.max(0.0) * u / (u - l);
                    let b = -w.min(0.0);
                    let (zhat, z, _) = relu_vertex_min(a, b, l, u);
                    (zhat, z)
                }
            }
        }
        Activation::Sigmoid => {
            if u - l < DEGENERATE_WIDTH {
                return (l, sigmoid(l));
            }
            let hull = sigmoid_hull_build(l, u).expect("hull for valid bounds");
            // the z that minimizes -w z sits on the upper bound for w > 0
            // and on the lower bound otherwise
            let pieces = if w > 0.0 {
                hull.upper_pieces()
            } else {
                hull.lower_pieces()
            };
            let mut best: Option<(f64, f64, f64)> = None;
            for piece in pieces {
                let (zhat, value) = match piece.kind {
                    PieceKind::Linear { slope, intercept } => {
                        let (zhat, v) = min_linear_interval(rho - w * slope, piece.lo, piece.hi);
                        (zhat, v - w * intercept)
                    }
                    PieceKind::Sigma => sigmoid_piece_min(rho, -w, piece.lo, piece.hi),
                };
                let z = piece.eval(zhat);
                match best {
                    Some((_, _, bv)) if bv <= value => {}
                    _ => best = Some((zhat, z, value)),
                }
            }
            let (zhat, z, _) = best.expect("hull has at least one piece");
            (zhat, z)
        }
    }
}

/// Evaluates the decomposition dual at `duals`: solves every subproblem in
/// closed form and returns the bound together with the minimizing copies.
/// Any multiplier value yields a valid lower bound on the relaxation.
pub fn eval_q(problem: &BoundProblem, duals: &DecompDuals) -> Result<(f64, PrimalCopies)> {
    duals.validate(problem.net)?;
    let copies = inner_minimize(problem, |k| problem.rho_eff(duals, k))?;
    let bound = lagrangian(problem, duals, &copies);
    Ok((bound, copies))
}

/// Solves all subproblems against the per-layer coefficient function
/// (plain multipliers for the dual, shifted multipliers for the
/// conditional gradient).
fn inner_minimize(
    problem: &BoundProblem,
    coeff: impl Fn(usize) -> Tensor,
) -> Result<PrimalCopies> {
    let hidden = problem.net.num_hidden();
    let (z0, pre0) = inner_min_p0(problem, &coeff(0))?;
    let mut pre_a = vec![pre0];
    let mut pre_b = Vec::with_capacity(hidden);
    let mut post = Vec::with_capacity(hidden);
    for k in 0..hidden {
        let sol = inner_min_pk(problem, k, &coeff(k), &coeff(k + 1))?;
        pre_b.push(sol.pre_b);
        post.push(sol.post);
        pre_a.push(sol.pre_a_next);
    }
    Ok(PrimalCopies {
        z0,
        pre_a,
        pre_b,
        post,
    })
}

/// The (non-augmented) Lagrangian at the given copies: the objective term
/// plus the multiplier-weighted copy residuals.
pub fn lagrangian(problem: &BoundProblem, duals: &DecompDuals, copies: &PrimalCopies) -> f64 {
    let mut value = problem.objective.dot(copies.pre_a.last().unwrap());
    for (k, rho) in duals.rho.iter().enumerate() {
        value += rho.dot(&copies.pre_b[k]) - rho.dot(&copies.pre_a[k]);
    }
    value
}

/// The augmented Lagrangian: adds the quadratic copy-residual penalty with
/// weight `1 / (2 eta)` per layer.
pub fn augmented_lagrangian(
    problem: &BoundProblem,
    duals: &DecompDuals,
    eta: f64,
    copies: &PrimalCopies,
) -> f64 {
    let mut value = lagrangian(problem, duals, copies);
    for k in 0..duals.rho.len() {
        value += copies.pre_b[k].sub(&copies.pre_a[k]).norm_sq() / (2.0 * eta);
    }
    value
}

/// Maps the backward-pass dual state onto decomposition multipliers; the
/// resulting dual value reproduces the backward-pass bound exactly.
pub fn wk_initialize(state: &WkState) -> DecompDuals {
    DecompDuals {
        rho: state.nu.clone(),
    }
}

/// Supergradient ascent with Adam updates and a linearly decayed step
/// size. Returns the best bound over all evaluations (the dual is
/// evaluated once before any update, so zero iterations reproduce the
/// initialization bound) and the final multipliers.
pub fn supergradient_solve(
    problem: &BoundProblem,
    config: &SolverConfig,
    rho_init: &DecompDuals,
) -> Result<SolveOutcome> {
    debug_assert_eq!(config.method, SolverMethod::Supergradient);
    debug_assert!(config.step_size_start > 0.0 && config.step_size_end > 0.0);
    let mut duals = rho_init.clone();
    duals.validate(problem.net)?;
    let (mut bound, mut copies) = eval_q(problem, &duals)?;
    let mut best = bound;
    let mut trace = vec![bound];
    let mut adam = AdamState::new(
        &duals.rho,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    for t in 1..=config.iterations {
        let grads = copies.residuals();
        let lr = schedule(config.step_size_start, config.step_size_end, t, config.iterations);
        adam.ascend(&mut duals.rho, &grads, lr);
        let (b, c) = eval_q(problem, &duals)?;
        bound = b;
        copies = c;
        trace.push(bound);
        if bound > best {
            best = bound;
        }
    }
    Ok(SolveOutcome {
        bound: best,
        duals,
        trace,
    })
}

/// Mutable solver state for the proximal method, shared with the
/// conditional-gradient and step-size helpers so tests can drive single
/// block updates.
pub struct ProxState<'a> {
    pub problem: BoundProblem<'a>,
    pub duals: DecompDuals,
    pub eta: f64,
    pub copies: PrimalCopies,
}

/// Conditional gradient (linear-minimization oracle) of one block of the
/// augmented Lagrangian.
#[derive(Debug, Clone)]
pub enum BlockCandidate {
    /// Block 0: the input copy and the first pre-activation.
    Input { z0: Tensor, pre_a: Tensor },
    /// Block `k + 1`: copies of hidden layer `k` and the next
    /// pre-activation.
    Hidden {
        k: usize,
        pre_b: Tensor,
        post: Tensor,
        pre_a_next: Tensor,
    },
}

impl<'a> ProxState<'a> {
    /// Gradient of the augmented Lagrangian with respect to the residual of
    /// layer `k`; also the closed-form next multiplier.
    fn shifted_rho(&self, k: usize) -> Tensor {
        if k < self.duals.rho.len() {
            let mut g = self.duals.rho[k].clone();
            g.axpy(
                1.0 / self.eta,
                &self.copies.pre_b[k].sub(&self.copies.pre_a[k]),
            );
            g
        } else {
            self.problem.rho_eff(&self.duals, k)
        }
    }
}

/// Linearizes the augmented Lagrangian at the current primals and solves
/// the block's subproblem on the linearization. The coefficients are
/// exactly the closed-form next multipliers, so with zero residual this
/// reproduces the plain dual's inner minimizer.
pub fn conditional_gradient_step(state: &ProxState, block: usize) -> Result<BlockCandidate> {
    if block == 0 {
        let (z0, pre_a) = inner_min_p0(&state.problem, &state.shifted_rho(0))?;
        Ok(BlockCandidate::Input { z0, pre_a })
    } else {
        let k = block - 1;
        let sol = inner_min_pk(
            &state.problem,
            k,
            &state.shifted_rho(k),
            &state.shifted_rho(k + 1),
        )?;
        Ok(BlockCandidate::Hidden {
            k,
            pre_b: sol.pre_b,
            post: sol.post,
            pre_a_next: sol.pre_a_next,
        })
    }
}

/// Closed-form optimal step of the per-block one-dimensional quadratic,
/// clamped to `[0, 1]`; returns 0 when the quadratic term vanishes.
pub fn optimal_step_size(state: &ProxState, candidate: &BlockCandidate) -> f64 {
    let hidden = state.duals.rho.len();
    let (num, denom) = match candidate {
        BlockCandidate::Input { pre_a, .. } => {
            if hidden == 0 {
                // single subproblem: no quadratic term exists
                return 0.0;
            }
            let d = pre_a.sub(&state.copies.pre_a[0]);
            let g = state.shifted_rho(0);
            (-g.dot(&d), d.norm_sq() / state.eta)
        }
        BlockCandidate::Hidden {
            k,
            pre_b,
            pre_a_next,
            ..
        } => {
            let db = pre_b.sub(&state.copies.pre_b[*k]);
            let da = pre_a_next.sub(&state.copies.pre_a[*k + 1]);
            let gk = state.shifted_rho(*k);
            let mut num = gk.dot(&db);
            let mut denom = db.norm_sq() / state.eta;
            if *k + 1 < hidden {
                let gn = state.shifted_rho(*k + 1);
                num -= gn.dot(&da);
                denom += da.norm_sq() / state.eta;
            } else {
                num += state.problem.objective.dot(&da);
            }
            (num, denom)
        }
    };
    if denom < 1e-12 {
        0.0
    } else {
        (-num / denom).clamp(0.0, 1.0)
    }
}

/// Frank-Wolfe update of one block: convex combination toward the
/// candidate, which keeps every copy inside its subproblem's feasible set.
pub fn apply_block_step(state: &mut ProxState, candidate: &BlockCandidate, gamma: f64) {
    match candidate {
        BlockCandidate::Input { z0, pre_a } => {
            state.copies.z0 = state.copies.z0.lerp(z0, gamma);
            state.copies.pre_a[0] = state.copies.pre_a[0].lerp(pre_a, gamma);
        }
        BlockCandidate::Hidden {
            k,
            pre_b,
            post,
            pre_a_next,
        } => {
            state.copies.pre_b[*k] = state.copies.pre_b[*k].lerp(pre_b, gamma);
            state.copies.post[*k] = state.copies.post[*k].lerp(post, gamma);
            state.copies.pre_a[*k + 1] = state.copies.pre_a[*k + 1].lerp(pre_a_next, gamma);
        }
    }
}

/// One logged inner step of the proximal solver, with everything needed to
/// re-evaluate the augmented Lagrangian along the step direction.
#[derive(Debug, Clone)]
pub struct ProxStep {
    pub block: usize,
    pub gamma: f64,
    pub eta: f64,
    pub duals: DecompDuals,
    pub copies_before: PrimalCopies,
    pub candidate: BlockCandidate,
}

/// Proximal maximization (method of multipliers): alternates closed-form
/// dual updates (optionally with momentum) with Gauss-Seidel Frank-Wolfe
/// passes over the layer blocks of the augmented Lagrangian. The proximal
/// weight grows linearly over the outer iterations; the anytime bound is
/// re-evaluated after every outer iteration and the best is returned.
pub fn proximal_solve(
    problem: &BoundProblem,
    config: &SolverConfig,
    rho_init: &DecompDuals,
) -> Result<SolveOutcome> {
    proximal_solve_traced(problem, config, rho_init, &mut None)
}

pub fn proximal_solve_traced(
    problem: &BoundProblem,
    config: &SolverConfig,
    rho_init: &DecompDuals,
    trace_steps: &mut Option<Vec<ProxStep>>,
) -> Result<SolveOutcome> {
    debug_assert_eq!(config.method, SolverMethod::Proximal);
    debug_assert!(config.eta_start > 0.0 && config.eta_end > 0.0);
    debug_assert!((0.0..1.0).contains(&config.momentum));
    rho_init.validate(problem.net)?;
    let hidden = problem.net.num_hidden();
    let blocks = problem.net.num_affine();

    // primals start at the conditional gradient of the initial multipliers,
    // which is the plain inner minimizer, so the first bound comes free
    let (init_bound, copies) = eval_q(problem, rho_init)?;
    let mut state = ProxState {
        problem: *problem,
        duals: rho_init.clone(),
        eta: config.eta_start,
        copies,
    };
    let mut best = init_bound;
    let mut trace = vec![init_bound];
    let mut momentum: Vec<Tensor> = (0..hidden)
        .map(|k| Tensor::zeros(vec![problem.net.layer_width(k)]))
        .collect();

    for t in 1..=config.iterations {
        state.eta = schedule(config.eta_start, config.eta_end, t, config.iterations);
        // dual update from the current primal residuals
        for k in 0..hidden {
            let residual = state.copies.pre_b[k].sub(&state.copies.pre_a[k]);
            if config.momentum > 0.0 {
                let pi = &mut momentum[k];
                for v in pi.data_mut() {
                    *v *= config.momentum;
                }
                pi.axpy(1.0 / state.eta, &residual);
                state.duals.rho[k].axpy(1.0, pi);
            } else {
                state.duals.rho[k].axpy(1.0 / state.eta, &residual);
            }
        }
        // block-coordinate Frank-Wolfe passes on the augmented Lagrangian
        for _ in 0..config.inner_iterations {
            for block in 0..blocks {
                let candidate = conditional_gradient_step(&state, block)?;
                let gamma = optimal_step_size(&state, &candidate);
                if let Some(steps) = trace_steps.as_mut() {
                    steps.push(ProxStep {
                        block,
                        gamma,
                        eta: state.eta,
                        duals: state.duals.clone(),
                        copies_before: state.copies.clone(),
                        candidate: candidate.clone(),
                    });
                }
                apply_block_step(&mut state, &candidate, gamma);
            }
        }
        let (b, _) = eval_q(problem, &state.duals)?;
        trace.push(b);
        if b > best {
            best = b;
        }
    }
    Ok(SolveOutcome {
        bound: best,
        duals: state.duals,
        trace,
    })
}

/// Runs the configured solver from the backward-pass initialization
/// (zero multipliers for networks it does not cover).
pub fn solve_from_wk(
    net: &Network,
    dom: &InputDomain,
    bounds: &PreActBounds,
    objective: &Tensor,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    let problem = BoundProblem::new(net, dom, bounds, objective)?;
    let init = if net.num_hidden() == 0 || !net.all_relu() {
        DecompDuals::zeros(net)
    } else {
        let (_, state) = crate::prebounds::wk_backward_bound(net, dom, bounds, objective)?;
        wk_initialize(&state)
    };
    solve_with_init(&problem, config, &init)
}

/// Dispatch on the configured method.
pub fn solve_with_init(
    problem: &BoundProblem,
    config: &SolverConfig,
    init: &DecompDuals,
) -> Result<SolveOutcome> {
    match config.method {
        SolverMethod::Supergradient => supergradient_solve(problem, config, init),
        SolverMethod::Proximal => proximal_solve(problem, config, init),
    }
}

/// Independent bound problems (one objective row each) solved
/// data-parallel; the output order matches the input order, so results
/// are identical to sequential per-objective runs.
pub fn solve_batch(
    net: &Network,
    dom: &InputDomain,
    bounds: &PreActBounds,
    objectives: &[Tensor],
    config: &SolverConfig,
) -> Result<Vec<SolveOutcome>> {
    par::map_slice(objectives, |c| solve_from_wk(net, dom, bounds, c, config))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests;
