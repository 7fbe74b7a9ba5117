//! Ground truth at desk scale: the explicit relaxation LP with a dense
//! simplex, exact nonconvex minimization by ReLU activation-pattern
//! enumeration, and feasible-point upper bounds.

mod simplex;

pub use simplex::simplex_solve;

use crate::domain::InputDomain;
use crate::hulls::ReluState;
use crate::net::Network;
use crate::prebounds::PreActBounds;
use crate::{par, Error, Result, Tensor};

/// Default cap on LP variables; instances above it are refused.
pub const DEFAULT_VAR_CAP: usize = 2000;

/// Cap on ambiguous neurons for exact enumeration.
pub const DEFAULT_AMBIGUOUS_CAP: usize = 16;

/// A linear program `min objective . x + offset` over free variables
/// subject to `a_ub x <= b_ub` and `a_eq x = b_eq`, stored dense.
#[derive(Debug, Clone)]
pub struct ExplicitLp {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
}

impl ExplicitLp {
    /// Largest violation of the constraints at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in self.a_ub.iter().zip(&self.b_ub) {
            let lhs: f64 = a.iter().zip(x).map(|(a, x)| a * x).sum();
            worst = worst.max(lhs - b);
        }
        for (a, b) in self.a_eq.iter().zip(&self.b_eq) {
            let lhs: f64 = a.iter().zip(x).map(|(a, x)| a * x).sum();
            worst = worst.max((lhs - b).abs());
        }
        worst
    }

    /// Objective value (with offset) at `x`.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + self.objective_offset
    }

    /// Writes the program in the plain LP text format for external solvers.
    pub fn write_lp_format(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        let term = |c: f64, j: usize| format!("{:+} x{}", c, j);
        writeln!(out, "Minimize")?;
        let mut obj = String::from(" obj:");
        for (j, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                obj.push(' ');
                obj.push_str(&term(*c, j));
            }
        }
        if self.objective_offset != 0.0 {
            obj.push_str(&format!(" {:+}", self.objective_offset));
        }
        writeln!(out, "{}", obj)?;
        writeln!(out, "Subject To")?;
        for (i, (a, b)) in self.a_ub.iter().zip(&self.b_ub).enumerate() {
            let mut line = format!(" c{}:", i);
            for (j, c) in a.iter().enumerate() {
                if *c != 0.0 {
                    line.push(' ');
                    line.push_str(&term(*c, j));
                }
            }
            writeln!(out, "{} <= {}", line, b)?;
        }
        for (i, (a, b)) in self.a_eq.iter().zip(&self.b_eq).enumerate() {
            let mut line = format!(" e{}:", i);
            for (j, c) in a.iter().enumerate() {
                if *c != 0.0 {
                    line.push(' ');
                    line.push_str(&term(*c, j));
                }
            }
            writeln!(out, "{} = {}", line, b)?;
        }
        writeln!(out, "Bounds")?;
        for j in 0..self.num_vars {
            writeln!(out, " x{} free", j)?;
        }
        writeln!(out, "End")
    }
}

/// Variable layout of the relaxation LP: input variables first, then per
/// hidden layer the pre-activation block followed by the post-activation
/// block.
#[derive(Debug, Clone)]
pub struct PlanetLayout {
    pub input_dim: usize,
    pub widths: Vec<usize>,
}

impl PlanetLayout {
    pub fn input(&self, i: usize) -> usize {
        debug_assert!(i < self.input_dim);
        i
    }

    pub fn pre(&self, k: usize, j: usize) -> usize {
        self.input_dim + self.widths[..k].iter().map(|w| 2 * w).sum::<usize>() + j
    }

    pub fn post(&self, k: usize, j: usize) -> usize {
        self.pre(k, j) + self.widths[k]
    }

    pub fn total(&self) -> usize {
        self.input_dim + 2 * self.widths.iter().sum::<usize>()
    }
}

/// Assembles the triangle-relaxation LP of a ReLU network over a box
/// domain: input box, affine equalities, and per-neuron hull rows, with
/// the pre-activation boxes included. Conv layers are materialized dense
/// here (and only here).
pub fn assemble_planet_lp(
    net: &Network,
    dom: &InputDomain,
    bounds: &PreActBounds,
    c: &Tensor,
) -> Result<(ExplicitLp, PlanetLayout)> {
    assemble_planet_lp_capped(net, dom, bounds, c, DEFAULT_VAR_CAP)
}

pub fn assemble_planet_lp_capped(
    net: &Network,
    dom: &InputDomain,
    bounds: &PreActBounds,
    c: &Tensor,
    var_cap: usize,
) -> Result<(ExplicitLp, PlanetLayout)> {
    let InputDomain::Box { lower: l0, upper: u0 } = dom else {
        return Err(Error::Unsupported("assemble_planet_lp requires a box domain"));
    };
    if !net.all_relu() {
        return Err(Error::Unsupported("assemble_planet_lp requires ReLU activations"));
    }
    bounds.validate(net)?;
    c.expect_len(net.output_dim(), "objective")?;

    let hidden = net.num_hidden();
    let layout = PlanetLayout {
        input_dim: net.input_dim(),
        widths: (0..hidden).map(|k| net.layer_width(k)).collect(),
    };
    let n = layout.total();
    if n > var_cap {
        return Err(Error::LpTooLarge { vars: n, cap: var_cap });
    }

    let mut lp = ExplicitLp {
        num_vars: n,
        objective: vec![0.0; n],
        objective_offset: 0.0,
        a_ub: Vec::new(),
        b_ub: Vec::new(),
        a_eq: Vec::new(),
        b_eq: Vec::new(),
    };

    // objective: c . (W_last z_prev + b_last)
    let last = net.num_affine() - 1;
    let w_last = net.affine(last).to_dense_matrix();
    lp.objective_offset = c.dot(&net.affine(last).bias_vector());
    for (o, row) in w_last.iter().enumerate() {
        for (i, w) in row.iter().enumerate() {
            let var = if hidden == 0 {
                layout.input(i)
            } else {
                layout.post(hidden - 1, i)
            };
            lp.objective[var] += c[o] * w;
        }
    }

    // input box
    for i in 0..layout.input_dim {
        let mut row = vec![0.0; n];
        row[layout.input(i)] = 1.0;
        lp.a_ub.push(row.clone());
        lp.b_ub.push(u0[i]);
        row[layout.input(i)] = -1.0;
        lp.a_ub.push(row);
        lp.b_ub.push(-l0[i]);
    }

    for k in 0..hidden {
        let w = net.affine(k).to_dense_matrix();
        let bias = net.affine(k).bias_vector();
        let (lb, ub) = bounds.layer(k);
        for j in 0..layout.widths[k] {
            // affine equality: pre_kj - W . prev = b_kj
            let mut row = vec![0.0; n];
            row[layout.pre(k, j)] = 1.0;
            for (i, wij) in w[j].iter().enumerate() {
                let var = if k == 0 {
                    layout.input(i)
                } else {
                    layout.post(k - 1, i)
                };
                row[var] -= wij;
            }
            lp.a_eq.push(row);
            lp.b_eq.push(bias[j]);

            // pre-activation box
            let mut row = vec![0.0; n];
            row[layout.pre(k, j)] = 1.0;
            lp.a_ub.push(row.clone());
            lp.b_ub.push(ub[j]);
            row[layout.pre(k, j)] = -1.0;
            lp.a_ub.push(row);
            lp.b_ub.push(-lb[j]);

            // hull rows
            match ReluState::from_bounds(lb[j], ub[j]) {
                ReluState::Blocked => {
                    let mut row = vec![0.0; n];
                    row[layout.post(k, j)] = 1.0;
                    lp.a_eq.push(row);
                    lp.b_eq.push(0.0);
                }
                ReluState::Passing => {
                    let mut row = vec![0.0; n];
                    row[layout.post(k, j)] = 1.0;
                    row[layout.pre(k, j)] = -1.0;
                    lp.a_eq.push(row);
                    lp.b_eq.push(0.0);
                }
                ReluState::Ambiguous => {
                    let slope = ub[j] / (ub[j] - lb[j]);
                    // z >= 0
                    let mut row = vec![0.0; n];
                    row[layout.post(k, j)] = -1.0;
                    lp.a_ub.push(row);
                    lp.b_ub.push(0.0);
                    // z >= pre
                    let mut row = vec![0.0; n];
                    row[layout.post(k, j)] = -1.0;
                    row[layout.pre(k, j)] = 1.0;
                    lp.a_ub.push(row);
                    lp.b_ub.push(0.0);
                    // z <= slope * (pre - l)
                    let mut row = vec![0.0; n];
                    row[layout.post(k, j)] = 1.0;
                    row[layout.pre(k, j)] = -slope;
                    lp.a_ub.push(row);
                    lp.b_ub.push(-slope * lb[j]);
                }
            }
        }
    }
    Ok((lp, layout))
}

/// Exact minimum of `c . output` over the domain by enumerating ReLU
/// activation patterns. For each pattern the network restricted to that
/// pattern is affine in the input, so each subproblem is a small LP over
/// the input variables with the pattern's sign constraints. Pattern LPs
/// run data-parallel; the final reduction is sequential.
pub fn exact_min_enumerate(
    net: &Network,
    dom: &InputDomain,
    bounds: &PreActBounds,
    c: &Tensor,
) -> Result<f64> {
    exact_min_enumerate_capped(net, dom, bounds, c, DEFAULT_AMBIGUOUS_CAP)
}

pub fn exact_min_enumerate_capped(
    net: &Network,
    dom: &InputDomain,
    bounds: &PreActBounds,
    c: &Tensor,
    cap: usize,
) -> Result<f64> {
    let InputDomain::Box { lower: l0, upper: u0 } = dom else {
        return Err(Error::Unsupported("exact_min_enumerate requires a box domain"));
    };
    if !net.all_relu() {
        return Err(Error::Unsupported("exact_min_enumerate requires ReLU activations"));
    }
    bounds.validate(net)?;
    let hidden = net.num_hidden();
    let mut ambiguous = Vec::new();
    for k in 0..hidden {
        let (lb, ub) = bounds.layer(k);
        for j in 0..net.layer_width(k) {
            if ReluState::from_bounds(lb[j], ub[j]) == ReluState::Ambiguous {
                ambiguous.push((k, j));
            }
        }
    }
    if ambiguous.len() > cap {
        return Err(Error::TooManyAmbiguous {
            count: ambiguous.len(),
            cap,
        });
    }

    let dense: Vec<Vec<Vec<f64>>> = (0..net.num_affine())
        .map(|k| net.affine(k).to_dense_matrix())
        .collect();
    let d0 = net.input_dim();

    let results: Vec<Result<Option<f64>>> = par::map_indexed(1usize << ambiguous.len(), |pattern| {
        // affine map of the input: rows `map`, constants `off`
        let mut map: Vec<Vec<f64>> = (0..d0)
            .map(|i| {
                let mut e = vec![0.0; d0];
                e[i] = 1.0;
                e
            })
            .collect();
        let mut off = vec![0.0; d0];

        let mut a_ub: Vec<Vec<f64>> = Vec::new();
        let mut b_ub: Vec<f64> = Vec::new();
        for i in 0..d0 {
            let mut row = vec![0.0; d0];
            row[i] = 1.0;
            a_ub.push(row.clone());
            b_ub.push(u0[i]);
            row[i] = -1.0;
            a_ub.push(row);
            b_ub.push(-l0[i]);
        }

        for k in 0..net.num_affine() {
            // compose the affine layer into (map, off)
            let w = &dense[k];
            let bias = net.affine(k).bias_vector();
            let mut nmap = vec![vec![0.0; d0]; w.len()];
            let mut noff = vec![0.0; w.len()];
            for (o, row) in w.iter().enumerate() {
                let mut acc_off = bias[o];
                for (i, wv) in row.iter().enumerate() {
                    if *wv != 0.0 {
                        for t in 0..d0 {
                            nmap[o][t] += wv * map[i][t];
                        }
                        acc_off += wv * off[i];
                    }
                }
                noff[o] = acc_off;
            }
            map = nmap;
            off = noff;

            if k == net.num_affine() - 1 {
                break;
            }
            let (lb, ub) = bounds.layer(k);
            for j in 0..net.layer_width(k) {
                let passing = match ReluState::from_bounds(lb[j], ub[j]) {
                    ReluState::Passing => true,
                    ReluState::Blocked => false,
                    ReluState::Ambiguous => {
                        let idx = ambiguous.iter().position(|&(ak, aj)| ak == k && aj == j).unwrap();
                        let is_passing = pattern >> idx & 1 == 1;
                        // sign constraint on the pre-activation
                        let sgn = if is_passing { -1.0 } else { 1.0 };
                        a_ub.push(map[j].iter().map(|v| sgn * v).collect());
                        b_ub.push(-sgn * off[j]);
                        is_passing
                    }
                };
                if !passing {
                    for v in map[j].iter_mut() {
                        *v = 0.0;
                    }
                    off[j] = 0.0;
                }
            }
        }

        // objective c . (map x + off)
        let mut obj = vec![0.0; d0];
        let mut offset = 0.0;
        for (o, row) in map.iter().enumerate() {
            for t in 0..d0 {
                obj[t] += c[o] * row[t];
            }
            offset += c[o] * off[o];
        }
        let lp = ExplicitLp {
            num_vars: d0,
            objective: obj,
            objective_offset: offset,
            a_ub,
            b_ub,
            a_eq: vec![],
            b_eq: vec![],
        };
        match simplex_solve(&lp) {
            Ok((v, _)) => Ok(Some(v)),
            Err(Error::LpInfeasible) => Ok(None),
            Err(e) => Err(e),
        }
    });

    let mut best = f64::INFINITY;
    for r in results {
        if let Some(v) = r? {
            best = best.min(v);
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::LpInfeasible)
    }
}

/// Smallest objective value over candidate inputs; a feasible-point upper
/// bound on the exact minimum.
pub fn feasible_upper_bound(
    net: &Network,
    dom: &InputDomain,
    c: &Tensor,
    candidates: &[Tensor],
) -> Result<(f64, Option<Tensor>)> {
    let mut best = f64::INFINITY;
    let mut arg = None;
    for x in candidates {
        debug_assert!(dom.contains(x, 1e-9));
        let v = c.dot(&net.eval(x)?);
        if v < best {
            best = v;
            arg = Some(x.clone());
        }
    }
    Ok((best, arg))
}
