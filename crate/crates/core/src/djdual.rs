//! The baseline Lagrangian-relaxation dual for ReLU networks: both the
//! linear layers and the activation equalities are dualized, leaving box
//! constraints only. Evaluating it decomposes into independent per-neuron
//! scalar problems; the decomposition dual evaluated at the same layer
//! multipliers is provably at least as tight, which the bridge exploits.

use crate::decomp::{BoundProblem, DecompDuals};
use crate::hulls::min_linear_interval;
use crate::opt::{schedule, AdamState};
use crate::{Error, Result, Tensor};

/// Multipliers of the baseline dual: one pair per hidden layer, `mu` for
/// the affine equality and `lambda` for the activation equality.
#[derive(Debug, Clone, PartialEq)]
pub struct DjDuals {
    pub mu: Vec<Tensor>,
    pub lambda: Vec<Tensor>,
}

impl DjDuals {
    pub fn zeros(net: &crate::net::Network) -> Self {
        let z: Vec<Tensor> = (0..net.num_hidden())
            .map(|k| Tensor::zeros(vec![net.layer_width(k)]))
            .collect();
        Self {
            mu: z.clone(),
            lambda: z,
        }
    }

    pub fn validate(&self, net: &crate::net::Network) -> Result<()> {
        if self.mu.len() != net.num_hidden() || self.lambda.len() != net.num_hidden() {
            return Err(Error::ShapeMismatch {
                context: "dj duals".into(),
                expected: vec![net.num_hidden()],
                got: vec![self.mu.len(), self.lambda.len()],
            });
        }
        for k in 0..self.mu.len() {
            self.mu[k].expect_len(net.layer_width(k), "mu layer")?;
            self.lambda[k].expect_len(net.layer_width(k), "lambda layer")?;
        }
        Ok(())
    }
}

struct DEval {
    value: f64,
    /// Argmin of each per-neuron pre-activation term.
    pre_star: Vec<Tensor>,
    /// Argmin of each per-neuron post-activation term.
    post_star: Vec<Tensor>,
    /// Argmin of the input term.
    z0_star: Tensor,
}

fn eval_d_full(problem: &BoundProblem, duals: &DjDuals) -> Result<DEval> {
    let net = problem.net;
    if !net.all_relu() {
        return Err(Error::Unsupported("eval_d requires ReLU activations"));
    }
    duals.validate(net)?;
    let hidden = net.num_hidden();
    let c = problem.objective;
    let neg_c = {
        let mut t = c.flattened();
        for v in t.data_mut() {
            *v = -*v;
        }
        t
    };

    let last = net.num_affine() - 1;
    let mut value = c.dot(&net.affine(last).bias_vector());
    for k in 0..hidden {
        value -= duals.mu[k].dot(&net.affine(k).bias_vector());
    }

    let mut pre_star = Vec::with_capacity(hidden);
    let mut post_star = Vec::with_capacity(hidden);
    for k in 0..hidden {
        let (lb, ub) = problem.bounds.layer(k);
        let mu = &duals.mu[k];
        let lam = &duals.lambda[k];
        // min over the pre-activation box of mu * zhat - lambda * relu(zhat):
        // piecewise linear with a kink at zero, so a vertex of {l, 0, u}
        let mut pre = Vec::with_capacity(mu.len());
        for j in 0..mu.len() {
            let f = |z: f64| mu[j] * z - lam[j] * z.max(0.0);
            let mut best = (lb[j], f(lb[j]));
            if lb[j] < 0.0 && ub[j] > 0.0 && f(0.0) < best.1 {
                best = (0.0, f(0.0));
            }
            if f(ub[j]) < best.1 {
                best = (ub[j], f(ub[j]));
            }
            value += best.1;
            pre.push(best.0);
        }
        pre_star.push(Tensor::vector(pre));

        // min over the post-activation box of (lambda - W' mu_next) * z
        let mu_next = if k + 1 < hidden { &duals.mu[k + 1] } else { &neg_c };
        let w = net.affine(k + 1).adjoint(mu_next)?;
        let mut post = Vec::with_capacity(mu.len());
        for j in 0..mu.len() {
            let coeff = lam[j] - w[j];
            let (z, v) = min_linear_interval(coeff, lb[j].max(0.0), ub[j].max(0.0));
            value += v;
            post.push(z);
        }
        post_star.push(Tensor::vector(post));
    }

    // input term: min over the domain of -(W0' mu_1) . z0
    let mu_first = if hidden == 0 { &neg_c } else { &duals.mu[0] };
    let w0 = net.affine(0).adjoint(mu_first)?;
    let coeff0 = {
        let mut t = w0;
        for v in t.data_mut() {
            *v = -*v;
        }
        t
    };
    let (z0_star, v0) = problem.dom.minimize_linear(&coeff0);
    value += v0;

    Ok(DEval {
        value,
        pre_star,
        post_star,
        z0_star,
    })
}

/// Evaluates the baseline dual; any multiplier choice is a valid lower
/// bound on the relaxation.
pub fn eval_d(problem: &BoundProblem, duals: &DjDuals) -> Result<f64> {
    Ok(eval_d_full(problem, duals)?.value)
}

/// Result of a baseline-dual solve: the best bound, the multipliers that
/// achieved it, and the final multipliers.
#[derive(Debug, Clone)]
pub struct DsgOutcome {
    pub bound: f64,
    pub best_duals: DjDuals,
    pub final_duals: DjDuals,
    pub trace: Vec<f64>,
}

/// Supergradient ascent on the baseline dual with Adam updates and a
/// linearly decayed step size; anytime best-so-far bookkeeping.
pub fn dsg_supergradient_solve(
    problem: &BoundProblem,
    config: &crate::decomp::SolverConfig,
    init: &DjDuals,
) -> Result<DsgOutcome> {
    let net = problem.net;
    let mut duals = init.clone();
    duals.validate(net)?;
    let mut eval = eval_d_full(problem, &duals)?;
    let mut best = eval.value;
    let mut best_duals = duals.clone();
    let mut trace = vec![eval.value];

    let shapes: Vec<Tensor> = duals.mu.iter().chain(duals.lambda.iter()).cloned().collect();
    let mut adam = AdamState::new(
        &shapes,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    let hidden = net.num_hidden();

    for t in 1..=config.iterations {
        // supergradients from the inner argmins
        let mut grads = Vec::with_capacity(2 * hidden);
        for k in 0..hidden {
            let prev = if k == 0 {
                &eval.z0_star
            } else {
                &eval.post_star[k - 1]
            };
            let mut g = eval.pre_star[k].clone();
            g.axpy(-1.0, &net.affine(k).forward(prev)?.flattened());
            grads.push(g);
        }
        for k in 0..hidden {
            let mut g = eval.post_star[k].clone();
            let relu_pre = Tensor::vector(
                eval.pre_star[k].data().iter().map(|v| v.max(0.0)).collect(),
            );
            g.axpy(-1.0, &relu_pre);
            grads.push(g);
        }

        let mut params: Vec<Tensor> = duals.mu.iter().chain(duals.lambda.iter()).cloned().collect();
        let lr = schedule(config.step_size_start, config.step_size_end, t, config.iterations);
        adam.ascend(&mut params, &grads, lr);
        duals.mu = params[..hidden].to_vec();
        duals.lambda = params[hidden..].to_vec();

        eval = eval_d_full(problem, &duals)?;
        trace.push(eval.value);
        if eval.value > best {
            best = eval.value;
            best_duals = duals.clone();
        }
    }
    Ok(DsgOutcome {
        bound: best,
        best_duals,
        final_duals: duals,
        trace,
    })
}

/// Initialization used for baseline-dual runs: `mu` from the backward-pass
/// sensitivities, `lambda` at zero.
pub fn dsg_wk_init(
    net: &crate::net::Network,
    dom: &crate::domain::InputDomain,
    bounds: &crate::prebounds::PreActBounds,
    objective: &Tensor,
) -> Result<DjDuals> {
    if net.num_hidden() == 0 {
        return Ok(DjDuals {
            mu: vec![],
            lambda: vec![],
        });
    }
    let (_, state) = crate::prebounds::wk_backward_bound(net, dom, bounds, objective)?;
    Ok(DjDuals {
        lambda: state.nu.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
        mu: state.nu,
    })
}

/// Maps baseline-dual multipliers into the decomposition dual by reusing
/// the affine multipliers; the resulting bound is never worse.
pub fn dec_dsg_bridge(duals: &DjDuals) -> DecompDuals {
    DecompDuals {
        rho: duals.mu.clone(),
    }
}
