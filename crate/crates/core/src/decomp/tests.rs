use super::*;
use crate::oracle::{assemble_planet_lp, simplex_solve, ExplicitLp};
use crate::prebounds::{compute_intermediate_bounds, interval_propagate, wk_backward_bound};
use crate::testgen;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn identity_net(dim: usize) -> Network {
    let mut rows = vec![vec![0.0; dim]; dim];
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    testgen::dense_net(vec![(rows, vec![0.0; dim])], vec![])
}

fn unit_box(dim: usize) -> InputDomain {
    InputDomain::bounded(
        Tensor::vector(vec![0.0; dim]),
        Tensor::vector(vec![1.0; dim]),
    )
    .unwrap()
}

#[test]
fn p0_box_sign_rule() {
    let net = identity_net(2);
    let dom = unit_box(2);
    let bounds = interval_propagate(&net, &dom).unwrap();
    let c = Tensor::vector(vec![1.0, 1.0]);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    // first layer is the identity, so the adjoint of rho1 is rho1 itself
    let (z0, _) = inner_min_p0(&problem, &Tensor::vector(vec![1.0, -2.0])).unwrap();
    assert_eq!(z0.data(), &[1.0, 0.0]);
    // zero multipliers: lower corner by convention
    let (z0, _) = inner_min_p0(&problem, &Tensor::vector(vec![0.0, 0.0])).unwrap();
    assert_eq!(z0.data(), &[0.0, 0.0]);
}

#[test]
fn p0_matches_box_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..30 {
        let dim = rng.gen_range(1..=6);
        let out = rng.gen_range(1..=4);
        let rows: Vec<Vec<f64>> = (0..out)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let bias: Vec<f64> = (0..out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let net = testgen::dense_net(vec![(rows, bias)], vec![]);
        let lo: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..0.0)).collect();
        let hi: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        let dom = InputDomain::bounded(Tensor::vector(lo.clone()), Tensor::vector(hi.clone()))
            .unwrap();
        let bounds = interval_propagate(&net, &dom).unwrap();
        let c = Tensor::vector(vec![1.0; out]);
        let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
        let rho1 = Tensor::vector((0..out).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (_, pre) = inner_min_p0(&problem, &rho1).unwrap();
        let got = -rho1.dot(&pre);
        let mut oracle = f64::INFINITY;
        for mask in 0..(1u32 << dim) {
            let corner = Tensor::vector(
                (0..dim)
                    .map(|j| if mask >> j & 1 == 0 { lo[j] } else { hi[j] })
                    .collect(),
            );
            let v = -rho1.dot(&net.affine(0).forward(&corner).unwrap());
            oracle = oracle.min(v);
        }
        assert!((got - oracle).abs() <= 1e-10, "got {got}, oracle {oracle}");
    }
}

#[test]
fn p0_l2_ball_boundary_point() {
    let net = identity_net(2);
    let dom = InputDomain::l2_ball(Tensor::vector(vec![0.0, 0.0]), 1.0).unwrap();
    let bounds = interval_propagate(&net, &dom).unwrap();
    let c = Tensor::vector(vec![1.0, 1.0]);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let rho1 = Tensor::vector(vec![3.0, 4.0]);
    let (z0, _) = inner_min_p0(&problem, &rho1).unwrap();
    // maximizes rho1 . z over the ball: z = rho / |rho|
    assert!((z0[0] - 0.6).abs() <= 1e-12);
    assert!((z0[1] - 0.8).abs() <= 1e-12);
    // zero direction falls back to the center
    let (z0, _) = inner_min_p0(&problem, &Tensor::vector(vec![0.0, 0.0])).unwrap();
    assert_eq!(z0.data(), &[0.0, 0.0]);
}

fn scalar_chain(l: f64, u: f64) -> (Network, InputDomain) {
    // 1 -> 1 -> 1 chain with identity weights; bounds on the single hidden
    // neuron come straight from the input box
    let net = testgen::dense_net(
        vec![
            (vec![vec![1.0]], vec![0.0]),
            (vec![vec![1.0]], vec![0.0]),
        ],
        vec![Activation::Relu],
    );
    let dom =
        InputDomain::bounded(Tensor::vector(vec![l]), Tensor::vector(vec![u])).unwrap();
    (net, dom)
}

#[test]
fn pk_scalar_ambiguous_example() {
    let (net, dom) = scalar_chain(-1.0, 1.0);
    let bounds = interval_propagate(&net, &dom).unwrap();
    let c = Tensor::vector(vec![1.0]);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let sol = inner_min_pk(
        &problem,
        0,
        &Tensor::vector(vec![0.5]),
        &Tensor::vector(vec![-1.0]),
    )
    .unwrap();
    assert_eq!(sol.pre_b.data(), &[-1.0]);
    assert_eq!(sol.post.data(), &[0.0]);
    assert!((sol.value - (-0.5)).abs() <= 1e-12);
}

#[test]
fn pk_blocked_neuron_box_rule() {
    let (net, dom) = scalar_chain(-2.0, -1.0);
    let bounds = interval_propagate(&net, &dom).unwrap();
    let c = Tensor::vector(vec![1.0]);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let sol = inner_min_pk(
        &problem,
        0,
        &Tensor::vector(vec![1.0]),
        &Tensor::vector(vec![0.3]),
    )
    .unwrap();
    assert_eq!(sol.pre_b.data(), &[-2.0]);
    assert_eq!(sol.post.data(), &[0.0]);
}

/// Explicit LP over the single subproblem polytope of hidden layer `k`
/// (ReLU only): variables are the layer copies.
fn pk_polytope_lp(
    net: &Network,
    bounds: &PreActBounds,
    k: usize,
    rho_k: &Tensor,
    rho_next: &Tensor,
) -> ExplicitLp {
    use crate::hulls::ReluState;
    let m = net.layer_width(k);
    let m2 = net.layer_width(k + 1);
    let n = 2 * m + m2;
    let preb = |j: usize| j;
    let post = |j: usize| m + j;
    let prea = |j: usize| 2 * m + j;
    let (lb, ub) = bounds.layer(k);
    let mut lp = ExplicitLp {
        num_vars: n,
        objective: vec![0.0; n],
        objective_offset: 0.0,
        a_ub: vec![],
        b_ub: vec![],
        a_eq: vec![],
        b_eq: vec![],
    };
    for j in 0..m {
        lp.objective[preb(j)] = rho_k[j];
    }
    for j in 0..m2 {
        lp.objective[prea(j)] = -rho_next[j];
    }
    for j in 0..m {
        let mut row = vec![0.0; n];
        row[preb(j)] = 1.0;
        lp.a_ub.push(row.clone());
        lp.b_ub.push(ub[j]);
        row[preb(j)] = -1.0;
        lp.a_ub.push(row);
        lp.b_ub.push(-lb[j]);
        match ReluState::from_bounds(lb[j], ub[j]) {
            ReluState::Blocked => {
                let mut row = vec![0.0; n];
                row[post(j)] = 1.0;
                lp.a_eq.push(row);
                lp.b_eq.push(0.0);
            }
            ReluState::Passing => {
                let mut row = vec![0.0; n];
                row[post(j)] = 1.0;
                row[preb(j)] = -1.0;
                lp.a_eq.push(row);
                lp.b_eq.push(0.0);
            }
            ReluState::Ambiguous => {
                let slope = ub[j] / (ub[j] - lb[j]);
                let mut row = vec![0.0; n];
                row[post(j)] = -1.0;
                lp.a_ub.push(row.clone());
                lp.b_ub.push(0.0);
                let mut row = vec![0.0; n];
                row[post(j)] = -1.0;
                row[preb(j)] = 1.0;
                lp.a_ub.push(row);
                lp.b_ub.push(0.0);
                let mut row = vec![0.0; n];
                row[post(j)] = 1.0;
                row[preb(j)] = -slope;
                lp.a_ub.push(row);
                lp.b_ub.push(-slope * lb[j]);
            }
        }
    }
    let w = net.affine(k + 1).to_dense_matrix();
    let bias = net.affine(k + 1).bias_vector();
    for j in 0..m2 {
        let mut row = vec![0.0; n];
        row[prea(j)] = 1.0;
        for (i, wv) in w[j].iter().enumerate() {
            row[post(i)] -= wv;
        }
        lp.a_eq.push(row);
        lp.b_eq.push(bias[j]);
    }
    lp
}

#[test]
fn pk_matches_simplex_on_polytope() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..25 {
        let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
        let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
        let c = testgen::random_objective(&mut rng, &net);
        let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
        let k = rng.gen_range(0..net.num_hidden());
        let rho_k = Tensor::vector(
            (0..net.layer_width(k))
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        );
        let rho_next = Tensor::vector(
            (0..net.layer_width(k + 1))
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        );
        let sol = inner_min_pk(&problem, k, &rho_k, &rho_next).unwrap();
        let lp = pk_polytope_lp(&net, &bounds, k, &rho_k, &rho_next);
        let (oracle, _) = simplex_solve(&lp).unwrap();
        assert!(
            (sol.value - oracle).abs() <= 1e-7,
            "closed form {} vs simplex {}",
            sol.value,
            oracle
        );
    }
}

#[test]
fn eval_q_at_wk_init_reproduces_wk_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..25 {
        let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
        let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
        let c = testgen::random_objective(&mut rng, &net);
        let (wk, state) = wk_backward_bound(&net, &dom, &bounds, &c).unwrap();
        let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
        let (q, _) = eval_q(&problem, &wk_initialize(&state)).unwrap();
        assert!(
            (q - wk).abs() <= 1e-8,
            "dual at init {} vs backward bound {}",
            q,
            wk
        );
    }
}

#[test]
fn eval_q_zero_duals_decouples_to_last_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..10 {
        let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
        let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
        let c = testgen::random_objective(&mut rng, &net);
        let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
        let (q, _) = eval_q(&problem, &DecompDuals::zeros(&net)).unwrap();
        // with zero multipliers only the last subproblem contributes: the
        // post-activation copy of the final hidden layer ranges over its box
        let k = net.num_hidden() - 1;
        let (lb, ub) = problem.bounds.layer(k);
        let last = net.affine(net.num_affine() - 1);
        let w = last.adjoint(&c).unwrap();
        let mut expected = c.dot(&last.bias_vector());
        for j in 0..w.len() {
            let (lo, hi) = (lb[j].max(0.0), ub[j].max(0.0));
            let (_, v) = min_linear_interval(w[j], lo, hi);
            expected += v;
        }
        assert!((q - expected).abs() <= 1e-9, "q {} expected {}", q, expected);
    }
}

#[test]
fn eval_q_weak_duality_random_duals() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..15 {
        let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
        let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
        let c = testgen::random_objective(&mut rng, &net);
        let (lp, _) = assemble_planet_lp(&net, &dom, &bounds, &c).unwrap();
        let (lp_opt, _) = simplex_solve(&lp).unwrap();
        let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
        for _ in 0..20 {
            let duals = testgen::random_decomp_duals(&mut rng, &net, 1.5);
            let (q, _) = eval_q(&problem, &duals).unwrap();
            assert!(
                q <= lp_opt + 1e-8,
                "dual value {} exceeds relaxation optimum {}",
                q,
                lp_opt
            );
        }
    }
}

#[test]
fn eval_q_copies_are_subproblem_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
    let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
    let c = testgen::random_objective(&mut rng, &net);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let duals = testgen::random_decomp_duals(&mut rng, &net, 1.0);
    let (_, copies) = eval_q(&problem, &duals).unwrap();
    assert_copies_feasible(&problem, &copies, 1e-9);
}

fn assert_copies_feasible(problem: &BoundProblem, copies: &PrimalCopies, tol: f64) {
    let net = problem.net;
    assert!(problem.dom.contains(&copies.z0, tol));
    let pre0 = net.affine(0).forward(&copies.z0).unwrap();
    for j in 0..pre0.len() {
        assert!((pre0[j] - copies.pre_a[0][j]).abs() <= tol);
    }
    for k in 0..net.num_hidden() {
        let (lb, ub) = problem.bounds.layer(k);
        for j in 0..net.layer_width(k) {
            let (zb, z) = (copies.pre_b[k][j], copies.post[k][j]);
            assert!(zb >= lb[j] - tol && zb <= ub[j] + tol);
            match net.activation(k) {
                Activation::Relu => {
                    let (lo, hi) = crate::hulls::relu_hull_eval(
                        lb[j],
                        ub[j],
                        zb.clamp(lb[j], ub[j]),
                    )
                    .unwrap();
                    assert!(z >= lo - tol && z <= hi + tol, "hull violated");
                }
                Activation::Sigmoid => {
                    let hull = sigmoid_hull_build(lb[j], ub[j]).unwrap();
                    assert!(z >= hull.lower_at(zb) - tol && z <= hull.upper_at(zb) + tol);
                }
            }
        }
        let pre = net.affine(k + 1).forward(&copies.post[k]).unwrap();
        for j in 0..pre.len() {
            assert!((pre[j] - copies.pre_a[k + 1][j]).abs() <= tol);
        }
    }
}

#[test]
fn supergradient_zero_iterations_is_init_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
    let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
    let c = testgen::random_objective(&mut rng, &net);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let init = testgen::random_decomp_duals(&mut rng, &net, 1.0);
    let (q, _) = eval_q(&problem, &init).unwrap();
    let out = supergradient_solve(&problem, &SolverConfig::supergradient(0), &init).unwrap();
    assert_eq!(out.bound.to_bits(), q.to_bits());
    assert_eq!(out.duals, init);
}

#[test]
fn supergradient_best_is_running_max_and_improves_on_wk() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for _ in 0..5 {
        let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
        let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
        let c = testgen::random_objective(&mut rng, &net);
        let (wk, state) = wk_backward_bound(&net, &dom, &bounds, &c).unwrap();
        let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
        let out = supergradient_solve(
            &problem,
            &SolverConfig::supergradient(100),
            &wk_initialize(&state),
        )
        .unwrap();
        let max = out.trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.bound.to_bits(), max.to_bits());
        assert!(out.bound >= wk - 1e-12);
    }
}

#[test]
fn supergradient_closes_gap_on_tiny_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..20 {
        let (net, dom) = testgen::random_relu_net(
            &mut rng,
            &testgen::NetConfig {
                width: (2, 5),
                hidden_layers: (1, 2),
                ..Default::default()
            },
        );
        let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
        let c = testgen::random_objective(&mut rng, &net);
        let (lp, _) = assemble_planet_lp(&net, &dom, &bounds, &c).unwrap();
        let (lp_opt, _) = simplex_solve(&lp).unwrap();
        let out = solve_from_wk(&net, &dom, &bounds, &c, &SolverConfig::supergradient(1000))
            .unwrap();
        assert!(out.bound <= lp_opt + 1e-8);
        assert!(
            lp_opt - out.bound <= 0.01 * lp_opt.abs() + 1e-3,
            "gap {} too large (LP* = {})",
            lp_opt - out.bound,
            lp_opt
        );
    }
}

#[test]
fn conditional_gradient_equals_inner_min_at_zero_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
    let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
    let c = testgen::random_objective(&mut rng, &net);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let duals = testgen::random_decomp_duals(&mut rng, &net, 1.0);
    let (_, copies) = eval_q(&problem, &duals).unwrap();
    // force exact agreement between the copies
    let mut agreed = copies.clone();
    for k in 0..net.num_hidden() {
        agreed.pre_b[k] = agreed.pre_a[k].clone();
    }
    let state = ProxState {
        problem,
        duals: duals.clone(),
        eta: 10.0,
        copies: agreed,
    };
    let plain = inner_minimize(&problem, |k| problem.rho_eff(&duals, k)).unwrap();
    for block in 0..net.num_affine() {
        match conditional_gradient_step(&state, block).unwrap() {
            BlockCandidate::Input { z0, pre_a } => {
                assert_eq!(z0.data(), plain.z0.data());
                assert_eq!(pre_a.data(), plain.pre_a[0].data());
            }
            BlockCandidate::Hidden {
                k,
                pre_b,
                post,
                pre_a_next,
            } => {
                assert_eq!(pre_b.data(), plain.pre_b[k].data());
                assert_eq!(post.data(), plain.post[k].data());
                assert_eq!(pre_a_next.data(), plain.pre_a[k + 1].data());
            }
        }
    }
}

#[test]
fn conditional_gradient_is_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(222);
    let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
    let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
    let c = testgen::random_objective(&mut rng, &net);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let duals = testgen::random_decomp_duals(&mut rng, &net, 1.0);
    let (_, copies) = eval_q(&problem, &duals).unwrap();
    let mut state = ProxState {
        problem,
        duals,
        eta: 5.0,
        copies,
    };
    // push the primals around a bit, then check candidate feasibility
    for block in 0..net.num_affine() {
        let cand = conditional_gradient_step(&state, block).unwrap();
        let gamma = optimal_step_size(&state, &cand);
        apply_block_step(&mut state, &cand, gamma);
    }
    assert_copies_feasible(&state.problem, &state.copies, 1e-9);
}

#[test]
fn conditional_gradient_limits_to_plain_minimizer_for_huge_eta() {
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
    let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
    let c = testgen::random_objective(&mut rng, &net);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let duals = testgen::random_decomp_duals(&mut rng, &net, 1.0);
    let (_, mut copies) = eval_q(&problem, &duals).unwrap();
    // nonzero residual so the shifted coefficients differ at finite eta
    for v in copies.pre_b[0].data_mut() {
        *v += 0.37;
    }
    let state = ProxState {
        problem,
        duals: duals.clone(),
        eta: 1e15,
        copies,
    };
    let plain = inner_minimize(&problem, |k| problem.rho_eff(&duals, k)).unwrap();
    for block in 0..net.num_affine() {
        match conditional_gradient_step(&state, block).unwrap() {
            BlockCandidate::Input { z0, .. } => assert_eq!(z0.data(), plain.z0.data()),
            BlockCandidate::Hidden { k, pre_b, .. } => {
                assert_eq!(pre_b.data(), plain.pre_b[k].data())
            }
        }
    }
}

#[test]
fn optimal_step_clamps_to_unit_interval() {
    let (net, dom) = scalar_chain(-1.0, 1.0);
    let bounds = interval_propagate(&net, &dom).unwrap();
    let c = Tensor::vector(vec![1.0]);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let zero = PrimalCopies {
        z0: Tensor::vector(vec![0.0]),
        pre_a: vec![Tensor::vector(vec![0.0]), Tensor::vector(vec![0.0])],
        pre_b: vec![Tensor::vector(vec![0.0])],
        post: vec![Tensor::vector(vec![0.0])],
    };
    let candidate = BlockCandidate::Hidden {
        k: 0,
        pre_b: Tensor::vector(vec![1.0]),
        post: Tensor::vector(vec![0.0]),
        pre_a_next: Tensor::vector(vec![0.0]),
    };
    // last-layer block: gamma* = clamp(-(g . db + c . da) / (|db|^2 / eta));
    // with db = 1, da = 0, eta = 1 the unconstrained minimizer is -rho
    let gamma_for = |rho: f64| {
        let state = ProxState {
            problem,
            duals: DecompDuals {
                rho: vec![Tensor::vector(vec![rho])],
            },
            eta: 1.0,
            copies: zero.clone(),
        };
        optimal_step_size(&state, &candidate)
    };
    assert_eq!(gamma_for(3.0), 0.0); // unconstrained minimizer -3
    assert_eq!(gamma_for(-2.0), 1.0); // unconstrained minimizer 2
    assert!((gamma_for(-0.25) - 0.25).abs() <= 1e-12); // interior stays put
}

#[test]
fn frank_wolfe_iterates_map_into_the_relaxation_lp() {
    // the copies satisfy every LP row exactly except the dualized
    // agreement equalities, whose violation is exactly the copy residual
    let mut rng = ChaCha8Rng::seed_from_u64(1313);
    let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
    let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
    let c = testgen::random_objective(&mut rng, &net);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let init = solve_wk_init(&problem);
    let mut steps = Some(Vec::new());
    proximal_solve_traced(&problem, &SolverConfig::proximal(15), &init, &mut steps).unwrap();
    let (lp, layout) = crate::oracle::assemble_planet_lp(&net, &dom, &bounds, &c).unwrap();
    for step in steps.unwrap().iter().step_by(7) {
        let copies = &step.copies_before;
        let mut point = vec![0.0; lp.num_vars];
        point[..copies.z0.len()].copy_from_slice(copies.z0.data());
        for k in 0..net.num_hidden() {
            for j in 0..net.layer_width(k) {
                point[layout.pre(k, j)] = copies.pre_b[k][j];
                point[layout.post(k, j)] = copies.post[k][j];
            }
        }
        let max_residual = copies
            .residuals()
            .iter()
            .flat_map(|r| r.data().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let violation = lp.max_violation(&point);
        assert!(
            violation <= max_residual + 1e-9,
            "LP violation {} exceeds copy residual {}",
            violation,
            max_residual
        );
        // inequality rows alone (boxes and hulls) hold exactly
        let mut worst_ineq = 0.0f64;
        for (a, b) in lp.a_ub.iter().zip(&lp.b_ub) {
            let lhs: f64 = a.iter().zip(&point).map(|(a, x)| a * x).sum();
            worst_ineq = worst_ineq.max(lhs - b);
        }
        assert!(worst_ineq <= 1e-9, "hull/box violation {}", worst_ineq);
    }
}

#[test]
fn optimal_step_zero_for_stationary_candidate() {
    let mut rng = ChaCha8Rng::seed_from_u64(333);
    let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
    let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
    let c = testgen::random_objective(&mut rng, &net);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let duals = testgen::random_decomp_duals(&mut rng, &net, 1.0);
    let (_, copies) = eval_q(&problem, &duals).unwrap();
    let state = ProxState {
        problem,
        duals,
        eta: 10.0,
        copies: copies.clone(),
    };
    // a candidate equal to the current primals has zero quadratic term
    let cand = BlockCandidate::Hidden {
        k: 0,
        pre_b: copies.pre_b[0].clone(),
        post: copies.post[0].clone(),
        pre_a_next: copies.pre_a[1].clone(),
    };
    assert_eq!(optimal_step_size(&state, &cand), 0.0);
}

#[test]
fn optimal_step_beats_local_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(444);
    for _ in 0..3 {
        let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
        let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
        let c = testgen::random_objective(&mut rng, &net);
        let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
        let mut steps = Some(Vec::new());
        let config = SolverConfig {
            iterations: 20,
            ..SolverConfig::proximal(20)
        };
        let init = solve_wk_init(&problem);
        proximal_solve_traced(&problem, &config, &init, &mut steps).unwrap();
        for step in steps.unwrap() {
            let base = lagrangian_along(&problem, &step, step.gamma);
            for delta in [-0.01, 0.01] {
                let g = (step.gamma + delta).clamp(0.0, 1.0);
                let perturbed = lagrangian_along(&problem, &step, g);
                assert!(
                    perturbed >= base - 1e-10,
                    "perturbed step {} beats chosen {} by {}",
                    g,
                    step.gamma,
                    base - perturbed
                );
            }
        }
    }
}

fn solve_wk_init(problem: &BoundProblem) -> DecompDuals {
    let (_, state) = wk_backward_bound(
        problem.net,
        problem.dom,
        problem.bounds,
        problem.objective,
    )
    .unwrap();
    wk_initialize(&state)
}

/// Augmented Lagrangian after moving the logged block by `gamma` toward
/// its candidate; evaluated from scratch, independent of the closed-form
/// step formula.
fn lagrangian_along(problem: &BoundProblem, step: &ProxStep, gamma: f64) -> f64 {
    let mut copies = step.copies_before.clone();
    match &step.candidate {
        BlockCandidate::Input { z0, pre_a } => {
            copies.z0 = copies.z0.lerp(z0, gamma);
            copies.pre_a[0] = copies.pre_a[0].lerp(pre_a, gamma);
        }
        BlockCandidate::Hidden {
            k,
            pre_b,
            post,
            pre_a_next,
        } => {
            copies.pre_b[*k] = copies.pre_b[*k].lerp(pre_b, gamma);
            copies.post[*k] = copies.post[*k].lerp(post, gamma);
            copies.pre_a[*k + 1] = copies.pre_a[*k + 1].lerp(pre_a_next, gamma);
        }
    }
    augmented_lagrangian(problem, &step.duals, step.eta, &copies)
}

#[test]
fn proximal_anytime_bounds_and_feasibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    for _ in 0..5 {
        let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
        let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
        let c = testgen::random_objective(&mut rng, &net);
        let (lp, _) = assemble_planet_lp(&net, &dom, &bounds, &c).unwrap();
        let (lp_opt, _) = simplex_solve(&lp).unwrap();
        let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
        let init = solve_wk_init(&problem);
        let out = proximal_solve(&problem, &SolverConfig::proximal(60), &init).unwrap();
        for b in &out.trace {
            assert!(*b <= lp_opt + 1e-8, "anytime bound {} above LP* {}", b, lp_opt);
        }
        assert!(out.bound >= out.trace[0] - 1e-12);
    }
}

#[test]
fn proximal_without_momentum_matches_manual_multiplier_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(666);
    let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
    let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
    let c = testgen::random_objective(&mut rng, &net);
    let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
    let init = solve_wk_init(&problem);
    let config = SolverConfig {
        momentum: 0.0,
        iterations: 1,
        inner_iterations: 0,
        eta_start: 7.0,
        eta_end: 7.0,
        ..SolverConfig::proximal(1)
    };
    let out = proximal_solve(&problem, &config, &init).unwrap();
    // with no inner iterations, one outer step is exactly
    // rho + residual(init copies) / eta
    let (_, copies) = eval_q(&problem, &init).unwrap();
    for k in 0..net.num_hidden() {
        let mut expected = init.rho[k].clone();
        expected.axpy(1.0 / 7.0, &copies.pre_b[k].sub(&copies.pre_a[k]));
        for j in 0..expected.len() {
            assert!((expected[j] - out.duals.rho[k][j]).abs() <= 1e-12);
        }
    }
}

#[test]
fn batched_solves_match_sequential_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let (net, dom) = testgen::random_relu_net(&mut rng, &testgen::NetConfig::default());
    let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
    let objectives: Vec<Tensor> = (0..6)
        .map(|_| testgen::random_objective(&mut rng, &net))
        .collect();
    for config in [SolverConfig::supergradient(40), SolverConfig::proximal(15)] {
        let batched = solve_batch(&net, &dom, &bounds, &objectives, &config).unwrap();
        for (c, b) in objectives.iter().zip(&batched) {
            let single = solve_from_wk(&net, &dom, &bounds, c, &config).unwrap();
            assert_eq!(single.bound.to_bits(), b.bound.to_bits());
        }
    }
}

#[test]
fn wk_initialize_special_scalings() {
    // all passing: biases push every pre-activation positive, D = I
    let net = testgen::dense_net(
        vec![
            (vec![vec![0.2], vec![0.1]], vec![5.0, 5.0]),
            (vec![vec![1.0, -1.0]], vec![0.0]),
        ],
        vec![Activation::Relu],
    );
    let dom =
        InputDomain::bounded(Tensor::vector(vec![-1.0]), Tensor::vector(vec![1.0])).unwrap();
    let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
    let c = Tensor::vector(vec![1.0]);
    let (_, state) = wk_backward_bound(&net, &dom, &bounds, &c).unwrap();
    let duals = wk_initialize(&state);
    for j in 0..2 {
        assert_eq!(duals.rho[0][j], state.nu_hat[0][j]);
    }

    // all blocked: rho = 0
    let net = testgen::dense_net(
        vec![
            (vec![vec![0.2], vec![0.1]], vec![-5.0, -5.0]),
            (vec![vec![1.0, -1.0]], vec![0.0]),
        ],
        vec![Activation::Relu],
    );
    let bounds = compute_intermediate_bounds(&net, &dom).unwrap();
    let (_, state) = wk_backward_bound(&net, &dom, &bounds, &c).unwrap();
    let duals = wk_initialize(&state);
    assert!(duals.rho[0].data().iter().all(|v| *v == 0.0));
}

#[test]
fn sigmoid_networks_are_solvable_and_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(888);
    for _ in 0..5 {
        let (net, dom) = testgen::random_relu_net(
            &mut rng,
            &testgen::NetConfig {
                activation: Activation::Sigmoid,
                ..Default::default()
            },
        );
        let bounds = interval_propagate(&net, &dom).unwrap();
        let c = testgen::random_objective(&mut rng, &net);
        let problem = BoundProblem::new(&net, &dom, &bounds, &c).unwrap();
        let init = DecompDuals::zeros(&net);
        let out = supergradient_solve(&problem, &SolverConfig::supergradient(150), &init)
            .unwrap();
        // Monte-Carlo soundness: no sampled input may beat the bound
        for _ in 0..2000 {
            let x = testgen::sample_in_domain(&mut rng, &dom);
            let v = c.dot(&net.eval(&x).unwrap());
            assert!(
                v >= out.bound - 1e-7,
                "sampled value {} below sigmoid dual bound {}",
                v,
                out.bound
            );
        }
    }
}
