//! Deterministic generators for small random test instances.
//!
//! Compiled for unit tests and behind the `test-utils` feature for
//! integration suites; not part of the solver API.

use crate::decomp::DecompDuals;
use crate::djdual::DjDuals;
use crate::domain::InputDomain;
use crate::net::{Activation, AffineLayer, Network};
use crate::prebounds::PreActBounds;
use crate::Tensor;
use rand::prelude::*;

/// Builds a dense network from row-major weight matrices and biases.
pub fn dense_net(layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>, acts: Vec<Activation>) -> Network {
    let affines = layers
        .into_iter()
        .map(|(rows, bias)| {
            let out = rows.len();
            let inp = rows[0].len();
            let data: Vec<f64> = rows.into_iter().flatten().collect();
            AffineLayer::dense(
                Tensor::new(vec![out, inp], data).unwrap(),
                Tensor::vector(bias),
            )
            .unwrap()
        })
        .collect();
    Network::new(affines, acts).unwrap()
}

/// The 1 -> 2 -> 1 absolute-value network: ReLU(x) + ReLU(-x).
pub fn abs_net() -> Network {
    dense_net(
        vec![
            (vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]),
            (vec![vec![1.0, 1.0]], vec![0.0]),
        ],
        vec![Activation::Relu],
    )
}

#[derive(Debug, Clone)]
pub struct NetConfig {
    pub input_dim: (usize, usize),
    pub hidden_layers: (usize, usize),
    pub width: (usize, usize),
    pub output_dim: (usize, usize),
    pub domain_radius: (f64, f64),
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_dim: (2, 4),
            hidden_layers: (1, 3),
            width: (3, 8),
            output_dim: (1, 2),
            domain_radius: (0.3, 1.0),
            activation: Activation::Relu,
        }
    }
}

fn random_affine(rng: &mut impl Rng, inp: usize, out: usize) -> AffineLayer {
    let scale = 1.0 / (inp as f64).sqrt();
    let data: Vec<f64> = (0..out * inp)
        .map(|_| rng.gen_range(-1.0..1.0) * scale * 1.7)
        .collect();
    let bias: Vec<f64> = (0..out).map(|_| rng.gen_range(-0.4..0.4)).collect();
    AffineLayer::dense(
        Tensor::new(vec![out, inp], data).unwrap(),
        Tensor::vector(bias),
    )
    .unwrap()
}

/// Random fully connected net with a box domain around a random center.
pub fn random_relu_net(rng: &mut impl Rng, cfg: &NetConfig) -> (Network, InputDomain) {
    let d0 = rng.gen_range(cfg.input_dim.0..=cfg.input_dim.1);
    let hidden = rng.gen_range(cfg.hidden_layers.0..=cfg.hidden_layers.1);
    let dout = rng.gen_range(cfg.output_dim.0..=cfg.output_dim.1);
    let mut dims = vec![d0];
    for _ in 0..hidden {
        dims.push(rng.gen_range(cfg.width.0..=cfg.width.1));
    }
    dims.push(dout);
    let affines: Vec<AffineLayer> = (0..dims.len() - 1)
        .map(|k| random_affine(rng, dims[k], dims[k + 1]))
        .collect();
    let acts = vec![cfg.activation; hidden];
    let net = Network::new(affines, acts).unwrap();

    let eps = rng.gen_range(cfg.domain_radius.0..cfg.domain_radius.1);
    let center: Vec<f64> = (0..d0).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let dom = InputDomain::bounded(
        Tensor::vector(center.iter().map(|c| c - eps).collect()),
        Tensor::vector(center.iter().map(|c| c + eps).collect()),
    )
    .unwrap();
    (net, dom)
}

/// Random objective of the network's output width, entries in [-1, 1].
pub fn random_objective(rng: &mut impl Rng, net: &Network) -> Tensor {
    Tensor::vector(
        (0..net.output_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )
}

/// Random decomposition duals with matching layer shapes.
pub fn random_decomp_duals(rng: &mut impl Rng, net: &Network, scale: f64) -> DecompDuals {
    DecompDuals {
        rho: (0..net.num_hidden())
            .map(|k| {
                Tensor::vector(
                    (0..net.layer_width(k))
                        .map(|_| rng.gen_range(-scale..scale))
                        .collect(),
                )
            })
            .collect(),
    }
}

/// Random baseline-dual variables with matching layer shapes.
pub fn random_dj_duals(rng: &mut impl Rng, net: &Network, scale: f64) -> DjDuals {
    let gen = |rng: &mut dyn RngCore, k: usize| {
        Tensor::vector(
            (0..k)
                .map(|_| rng.gen_range(-scale..scale))
                .collect::<Vec<_>>(),
        )
    };
    DjDuals {
        mu: (0..net.num_hidden())
            .map(|k| gen(rng, net.layer_width(k)))
            .collect(),
        lambda: (0..net.num_hidden())
            .map(|k| gen(rng, net.layer_width(k)))
            .collect(),
    }
}

/// Uniform sample inside the domain.
pub fn sample_in_domain(rng: &mut impl Rng, dom: &InputDomain) -> Tensor {
    match dom {
        InputDomain::Box { lower, upper } => Tensor::vector(
            lower
                .data()
                .iter()
                .zip(upper.data())
                .map(|(l, u)| if l == u { *l } else { rng.gen_range(*l..*u) })
                .collect(),
        ),
        InputDomain::L2Ball { center, radius } => {
            let d = center.len();
            let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(rand_distr_standard())).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let r = radius * rng.gen_range(0.0f64..1.0).powf(1.0 / d as f64);
            Tensor::vector(
                center
                    .data()
                    .iter()
                    .zip(&dir)
                    .map(|(c, v)| c + r * v / norm)
                    .collect(),
            )
        }
    }
}

// Box-Muller pair; avoids pulling rand_distr in for one gaussian.
fn rand_distr_standard() -> impl rand::distributions::Distribution<f64> {
    struct StdNormal;
    impl rand::distributions::Distribution<f64> for StdNormal {
        fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }
    StdNormal
}

/// All pre-activation vectors of the network at input `x`.
pub fn pre_activations(net: &Network, x: &Tensor) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(net.num_affine());
    let mut cur = x.flattened();
    for k in 0..net.num_affine() {
        let z = net.affine(k).forward(&cur).unwrap();
        if k < net.num_hidden() {
            let act = net.activation(k);
            cur = Tensor::vector(z.data().iter().map(|v| act.apply(*v)).collect());
        }
        out.push(z.flattened());
    }
    out
}

/// Draws nets until the ambiguous-ReLU count (under best intermediate
/// bounds) lands in `[1, max_ambiguous]`. Returns the bounds as well.
pub fn random_net_with_ambiguity(
    rng: &mut impl Rng,
    cfg: &NetConfig,
    max_ambiguous: usize,
) -> (Network, InputDomain, PreActBounds) {
    loop {
        let (net, dom) = random_relu_net(rng, cfg);
        let bounds = crate::prebounds::compute_intermediate_bounds(&net, &dom).unwrap();
        let amb = bounds.num_ambiguous(&net);
        if amb >= 1 && amb <= max_ambiguous {
            return (net, dom, bounds);
        }
    }
}
