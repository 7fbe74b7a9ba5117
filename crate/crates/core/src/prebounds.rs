//! Intermediate (per-layer) pre-activation bounds: interval propagation,
//! the backward-pass dual bound, and the best-of-both orchestration.

use crate::domain::InputDomain;
use crate::hulls::ReluState;
use crate::net::{Activation, Network};
use crate::par;
use crate::{Error, Result, Tensor};

/// Per-layer vectors bracketing the pre-activations of every affine layer.
///
/// Entry `k` bounds the output of affine layer `k` (0-based); the hidden
/// entries `0..num_hidden` are the ones activation hulls are built from,
/// the last entry bounds the network output.
#[derive(Debug, Clone)]
pub struct PreActBounds {
    pub lower: Vec<Tensor>,
    pub upper: Vec<Tensor>,
}

impl PreActBounds {
    pub fn num_layers(&self) -> usize {
        self.lower.len()
    }

    /// Bounds `(l, u)` for the pre-activations of affine layer `k`.
    pub fn layer(&self, k: usize) -> (&Tensor, &Tensor) {
        (&self.lower[k], &self.upper[k])
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.lower.len() < net.num_hidden() {
            return Err(Error::MissingBounds(self.lower.len()));
        }
        for k in 0..self.lower.len() {
            self.lower[k].expect_len(net.layer_width(k), "bounds lower")?;
            self.upper[k].expect_len(net.layer_width(k), "bounds upper")?;
            for (l, u) in self.lower[k].data().iter().zip(self.upper[k].data()) {
                if l > u || !l.is_finite() || !u.is_finite() {
                    return Err(Error::MissingBounds(k));
                }
            }
        }
        Ok(())
    }

    /// Count of ambiguous ReLUs over the hidden layers.
    pub fn num_ambiguous(&self, net: &Network) -> usize {
        let mut count = 0;
        for k in 0..net.num_hidden() {
            if net.activation(k) != Activation::Relu {
                continue;
            }
            count += self.lower[k]
                .data()
                .iter()
                .zip(self.upper[k].data())
                .filter(|(l, u)| ReluState::from_bounds(**l, **u) == ReluState::Ambiguous)
                .count();
        }
        count
    }
}

fn box_to_center_radius(lo: &Tensor, hi: &Tensor) -> (Tensor, Tensor) {
    let c = lo
        .data()
        .iter()
        .zip(hi.data())
        .map(|(l, u)| 0.5 * (l + u))
        .collect();
    let r = lo
        .data()
        .iter()
        .zip(hi.data())
        .map(|(l, u)| 0.5 * (u - l))
        .collect();
    (Tensor::vector(c), Tensor::vector(r))
}

fn activation_box(act: Activation, lo: &Tensor, hi: &Tensor) -> (Tensor, Tensor) {
    // both activations are monotone, so the box maps endpoint-wise
    let l = lo.data().iter().map(|v| act.apply(*v)).collect();
    let u = hi.data().iter().map(|v| act.apply(*v)).collect();
    (Tensor::vector(l), Tensor::vector(u))
}

/// Standard interval arithmetic through affine layers and the monotone
/// activations. Sound for every input in the domain; an L2 ball is first
/// relaxed to its bounding box.
pub fn interval_propagate(net: &Network, dom: &InputDomain) -> Result<PreActBounds> {
    let (mut lo, mut hi) = dom.bounding_box();
    let mut lower = Vec::with_capacity(net.num_affine());
    let mut upper = Vec::with_capacity(net.num_affine());
    for k in 0..net.num_affine() {
        let (c, r) = box_to_center_radius(&lo, &hi);
        let zc = net.affine(k).forward(&c)?;
        let zr = net.affine(k).forward_abs(&r)?;
        let l = zc.sub(&zr);
        let mut u = zc;
        u.axpy(1.0, &zr);
        if k < net.num_hidden() {
            let (al, au) = activation_box(net.activation(k), &l, &u);
            lo = al;
            hi = au;
        }
        lower.push(l.flattened());
        upper.push(u.flattened());
    }
    Ok(PreActBounds { lower, upper })
}

/// Interval lower bound on `c . output` using pure interval propagation.
pub fn interval_objective_bound(net: &Network, dom: &InputDomain, c: &Tensor) -> Result<f64> {
    c.expect_len(net.output_dim(), "objective")?;
    let bounds = interval_propagate(net, dom)?;
    let k = net.num_affine() - 1;
    let (l, u) = bounds.layer(k);
    Ok(c
        .data()
        .iter()
        .zip(l.data().iter().zip(u.data()))
        .map(|(c, (l, u))| if *c >= 0.0 { c * l } else { c * u })
        .sum())
}

/// Backward-pass state of the dual bound: per-layer sensitivity vectors and
/// the diagonal scalings derived from ReLU states.
#[derive(Debug, Clone)]
pub struct WkState {
    /// Scaled sensitivities at each hidden layer (after the diagonal).
    pub nu: Vec<Tensor>,
    /// Raw back-propagated sensitivities at each hidden layer.
    pub nu_hat: Vec<Tensor>,
    /// Sensitivity with respect to the network input.
    pub input_sens: Tensor,
    /// Diagonal entries: 0 (blocked), 1 (passing), u/(u-l) (ambiguous).
    pub scaling: Vec<Tensor>,
}

/// Backward-pass lower bound on `c . output` for ReLU networks.
///
/// One adjoint sweep through diagonal scalings; the returned state also
/// initializes the decomposition dual to the same bound.
pub fn wk_backward_bound(
    net: &Network,
    dom: &InputDomain,
    bounds: &PreActBounds,
    c: &Tensor,
) -> Result<(f64, WkState)> {
    wk_bound_prefix(net, dom, bounds, net.num_affine(), c)
}

/// Same as [`wk_backward_bound`] restricted to the subnetwork formed by the
/// first `k_end` affine layers; `c` bounds that truncated output.
pub fn wk_bound_prefix(
    net: &Network,
    dom: &InputDomain,
    bounds: &PreActBounds,
    k_end: usize,
    c: &Tensor,
) -> Result<(f64, WkState)> {
    assert!(k_end >= 1 && k_end <= net.num_affine());
    let hidden = k_end - 1;
    for k in 0..hidden {
        if net.activation(k) != Activation::Relu {
            return Err(Error::Unsupported("wk_backward_bound requires ReLU activations"));
        }
        if bounds.lower.len() <= k {
            return Err(Error::MissingBounds(k));
        }
    }
    c.expect_len(net.layer_width(k_end - 1), "wk objective")?;

    let mut nu = vec![Tensor::zeros(vec![0]); hidden];
    let mut nu_hat = vec![Tensor::zeros(vec![0]); hidden];
    let mut scaling = vec![Tensor::zeros(vec![0]); hidden];

    let neg_c = {
        let mut t = c.flattened();
        for v in t.data_mut() {
            *v = -*v;
        }
        t
    };

    let mut carry = neg_c.clone();
    let mut ambiguous_term = 0.0;
    for k in (0..hidden).rev() {
        let hat = net.affine(k + 1).adjoint(&carry)?;
        let (l, u) = bounds.layer(k);
        let mut scale = Vec::with_capacity(hat.len());
        let mut scaled = hat.clone();
        for j in 0..hat.len() {
            let d = match ReluState::from_bounds(l[j], u[j]) {
                ReluState::Blocked => 0.0,
                ReluState::Passing => 1.0,
                ReluState::Ambiguous => u[j] / (u[j] - l[j]),
            };
            scale.push(d);
            scaled[j] = d * hat[j];
            if ReluState::from_bounds(l[j], u[j]) == ReluState::Ambiguous {
                ambiguous_term += l[j] * scaled[j].max(0.0);
            }
        }
        nu_hat[k] = hat;
        scaling[k] = Tensor::vector(scale);
        carry = scaled.clone();
        nu[k] = scaled;
    }
    let input_sens = net.affine(0).adjoint(&carry)?;

    // bias terms: -sum_i nu_i . b_i with the output-layer convention nu = -c
    let mut bound = c.dot(&net.affine(k_end - 1).bias_vector());
    for k in 0..hidden {
        bound -= nu[k].dot(&net.affine(k).bias_vector());
    }
    // input support term
    match dom {
        InputDomain::Box { lower, upper } => {
            let (center, radius) = box_to_center_radius(lower, upper);
            bound -= input_sens.dot(&center);
            bound -= radius
                .data()
                .iter()
                .zip(input_sens.data())
                .map(|(r, v)| r * v.abs())
                .sum::<f64>();
        }
        InputDomain::L2Ball { center, radius } => {
            bound -= input_sens.dot(&center.flattened());
            bound -= radius * input_sens.norm_l2();
        }
    }
    bound += ambiguous_term;

    Ok((
        bound,
        WkState {
            nu,
            nu_hat,
            input_sens,
            scaling,
        },
    ))
}

/// Tightest per-layer bounds from interval propagation and the backward
/// dual bound, layer by layer; later layers reuse the earlier tightened
/// bounds. Per-neuron problems within a layer run data-parallel with a
/// fixed reduction order, so the result does not depend on worker count.
pub fn compute_intermediate_bounds(net: &Network, dom: &InputDomain) -> Result<PreActBounds> {
    compute_intermediate_bounds_clamped(net, dom, &[])
}

/// A sign decision imposed on one hidden neuron: clamp its pre-activation
/// bounds to the nonnegative (passing) or nonpositive (blocked) side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuronClamp {
    pub layer: usize,
    pub neuron: usize,
    pub passing: bool,
}

impl NeuronClamp {
    pub fn apply(&self, l: &mut f64, u: &mut f64) {
        if self.passing {
            *l = l.max(0.0);
            *u = u.max(0.0);
        } else {
            *u = u.min(0.0);
            *l = l.min(0.0);
        }
    }
}

/// [`compute_intermediate_bounds`] with sign decisions applied to each
/// layer as soon as it is bounded, so later layers see the tightening.
pub fn compute_intermediate_bounds_clamped(
    net: &Network,
    dom: &InputDomain,
    clamps: &[NeuronClamp],
) -> Result<PreActBounds> {
    let (mut act_lo, mut act_hi) = dom.bounding_box();
    let mut out = PreActBounds {
        lower: Vec::with_capacity(net.num_affine()),
        upper: Vec::with_capacity(net.num_affine()),
    };
    for k in 0..net.num_affine() {
        let (c, r) = box_to_center_radius(&act_lo, &act_hi);
        let zc = net.affine(k).forward(&c)?;
        let zr = net.affine(k).forward_abs(&r)?;
        let mut l = zc.sub(&zr).flattened();
        let mut u = {
            let mut t = zc;
            t.axpy(1.0, &zr);
            t.flattened()
        };

        let prefix_relu = (0..k).all(|i| net.activation(i) == Activation::Relu);
        if k > 0 && prefix_relu {
            let width = net.layer_width(k);
            let rows: Vec<Result<f64>> = par::map_indexed(2 * width, |row| {
                let j = row % width;
                let sign = if row < width { 1.0 } else { -1.0 };
                let mut e = Tensor::zeros(vec![width]);
                e[j] = sign;
                wk_bound_prefix(net, dom, &out, k + 1, &e).map(|(b, _)| b)
            });
            for (row, res) in rows.into_iter().enumerate() {
                let b = res?;
                let j = row % width;
                if row < width {
                    if b > l[j] {
                        l[j] = b;
                    }
                } else if -b < u[j] {
                    u[j] = -b;
                }
            }
            for j in 0..width {
                debug_assert!(u[j] >= l[j] - 1e-9, "bound cross at layer {k} neuron {j}");
                if u[j] < l[j] {
                    u[j] = l[j];
                }
            }
        }

        for clamp in clamps.iter().filter(|c| c.layer == k) {
            clamp.apply(&mut l[clamp.neuron], &mut u[clamp.neuron]);
        }

        if k < net.num_hidden() {
            let (al, au) = activation_box(net.activation(k), &l, &u);
            act_lo = al;
            act_hi = au;
        }
        out.lower.push(l);
        out.upper.push(u);
    }
    Ok(out)
}
