//! Network representation: affine layers (dense or 2-D convolution)
//! interleaved with elementwise activations, with forward application and
//! adjoint (transpose) application of every affine layer.
//!
//! Networks are immutable after construction and safe to share across
//! workers. Convolutions are computed by direct loops; a dense
//! materialization is exposed for the oracle module only, solvers never
//! materialize.

use crate::{Error, Result, Tensor};

/// Elementwise activation between affine layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic function.
pub fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// An affine layer `x -> W x + b`.
#[derive(Debug, Clone)]
pub enum AffineLayer {
    Dense {
        /// `[out, in]` matrix, row-major.
        weight: Tensor,
        bias: Tensor,
    },
    Conv2d {
        /// `[out_ch, in_ch, kh, kw]` kernel.
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
        /// Spatial size `(h, w)` of the `[in_ch, h, w]` input this layer
        /// was built for; convolution shapes are fixed at construction.
        in_hw: (usize, usize),
    },
}

impl AffineLayer {
    pub fn dense(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::InvalidNetwork(format!(
                "dense weight must be 2-D, got {:?}",
                weight.shape()
            )));
        }
        let out = weight.shape()[0];
        bias.expect_len(out, "dense bias")?;
        Ok(AffineLayer::Dense { weight, bias })
    }

    pub fn conv2d(
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
        in_hw: (usize, usize),
    ) -> Result<Self> {
        if weight.shape().len() != 4 {
            return Err(Error::InvalidNetwork(format!(
                "conv2d weight must be 4-D, got {:?}",
                weight.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidNetwork("conv2d stride must be >= 1".into()));
        }
        let (oc, _ic, kh, kw) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        );
        bias.expect_len(oc, "conv2d bias")?;
        let (h, w) = in_hw;
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::InvalidNetwork(
                "conv2d kernel larger than padded input".into(),
            ));
        }
        Ok(AffineLayer::Conv2d {
            weight,
            bias,
            stride,
            padding,
            in_hw,
        })
    }

    pub fn in_shape(&self) -> Vec<usize> {
        match self {
            AffineLayer::Dense { weight, .. } => vec![weight.shape()[1]],
            AffineLayer::Conv2d { weight, in_hw, .. } => {
                vec![weight.shape()[1], in_hw.0, in_hw.1]
            }
        }
    }

    pub fn out_shape(&self) -> Vec<usize> {
        match self {
            AffineLayer::Dense { weight, .. } => vec![weight.shape()[0]],
            AffineLayer::Conv2d {
                weight,
                stride,
                padding,
                in_hw,
                ..
            } => {
                let (kh, kw) = (weight.shape()[2], weight.shape()[3]);
                let ho = (in_hw.0 + 2 * padding - kh) / stride + 1;
                let wo = (in_hw.1 + 2 * padding - kw) / stride + 1;
                vec![weight.shape()[0], ho, wo]
            }
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_shape().iter().product()
    }

    pub fn out_dim(&self) -> usize {
        self.out_shape().iter().product()
    }

    pub fn bias(&self) -> &Tensor {
        match self {
            AffineLayer::Dense { bias, .. } => bias,
            AffineLayer::Conv2d { bias, .. } => bias,
        }
    }

    /// Bias as a full output-length vector; conv biases are broadcast over
    /// their spatial positions.
    pub fn bias_vector(&self) -> Tensor {
        match self {
            AffineLayer::Dense { bias, .. } => bias.flattened(),
            AffineLayer::Conv2d { bias, .. } => {
                let out = self.out_shape();
                let plane = out[1] * out[2];
                let mut data = Vec::with_capacity(out[0] * plane);
                for b in bias.data() {
                    data.extend(std::iter::repeat_n(*b, plane));
                }
                Tensor::vector(data)
            }
        }
    }

    /// `W x + b`. The input only needs the right element count; a flat
    /// vector is accepted for convolutional layers.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_len(self.in_dim(), "forward_affine input")?;
        Ok(self.apply_kernel(x.data(), true, false))
    }

    /// `Wᵀ v`, no bias. For conv2d this is the transposed convolution
    /// consistent with [`Self::forward`].
    pub fn adjoint(&self, v: &Tensor) -> Result<Tensor> {
        v.expect_len(self.out_dim(), "adjoint_affine input")?;
        Ok(self.apply_adjoint_kernel(v.data(), false))
    }

    /// `|W| x`, no bias. Used by interval propagation on radii.
    pub fn forward_abs(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_len(self.in_dim(), "forward_abs input")?;
        Ok(self.apply_kernel(x.data(), false, true))
    }

    fn apply_kernel(&self, x: &[f64], with_bias: bool, abs: bool) -> Tensor {
        match self {
            AffineLayer::Dense { weight, bias } => {
                let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                let w = weight.data();
                let mut y = vec![0.0; out];
                for o in 0..out {
                    let row = &w[o * inp..(o + 1) * inp];
                    let mut acc = 0.0;
                    if abs {
                        for i in 0..inp {
                            acc += row[i].abs() * x[i];
                        }
                    } else {
                        for i in 0..inp {
                            acc += row[i] * x[i];
                        }
                    }
                    y[o] = if with_bias { acc + bias[o] } else { acc };
                }
                Tensor::new(vec![out], y).expect("dense output")
            }
            AffineLayer::Conv2d {
                weight,
                bias,
                stride,
                padding,
                in_hw,
            } => {
                let (oc, ic, kh, kw) = (
                    weight.shape()[0],
                    weight.shape()[1],
                    weight.shape()[2],
                    weight.shape()[3],
                );
                let (h, w_in) = *in_hw;
                let out_shape = self.out_shape();
                let (ho, wo) = (out_shape[1], out_shape[2]);
                let wd = weight.data();
                let mut y = vec![0.0; oc * ho * wo];
                for o in 0..oc {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut acc = if with_bias { bias[o] } else { 0.0 };
                            for c in 0..ic {
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - *padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - *padding as isize;
                                        if ix < 0 || ix >= w_in as isize {
                                            continue;
                                        }
                                        let wv = wd[((o * ic + c) * kh + ky) * kw + kx];
                                        let wv = if abs { wv.abs() } else { wv };
                                        acc += wv * x[(c * h + iy as usize) * w_in + ix as usize];
                                    }
                                }
                            }
                            y[(o * ho + oy) * wo + ox] = acc;
                        }
                    }
                }
                Tensor::new(out_shape, y).expect("conv output")
            }
        }
    }

    fn apply_adjoint_kernel(&self, v: &[f64], abs: bool) -> Tensor {
        match self {
            AffineLayer::Dense { weight, .. } => {
                let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                let w = weight.data();
                let mut g = vec![0.0; inp];
                for o in 0..out {
                    let row = &w[o * inp..(o + 1) * inp];
                    let vo = v[o];
                    if abs {
                        for i in 0..inp {
                            g[i] += row[i].abs() * vo;
                        }
                    } else {
                        for i in 0..inp {
                            g[i] += row[i] * vo;
                        }
                    }
                }
                Tensor::new(vec![inp], g).expect("dense adjoint")
            }
            AffineLayer::Conv2d {
                weight,
                stride,
                padding,
                in_hw,
                ..
            } => {
                let (oc, ic, kh, kw) = (
                    weight.shape()[0],
                    weight.shape()[1],
                    weight.shape()[2],
                    weight.shape()[3],
                );
                let (h, w_in) = *in_hw;
                let out_shape = self.out_shape();
                let (ho, wo) = (out_shape[1], out_shape[2]);
                let wd = weight.data();
                let mut g = vec![0.0; ic * h * w_in];
                for o in 0..oc {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let vo = v[(o * ho + oy) * wo + ox];
                            for c in 0..ic {
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - *padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - *padding as isize;
                                        if ix < 0 || ix >= w_in as isize {
                                            continue;
                                        }
                                        let wv = wd[((o * ic + c) * kh + ky) * kw + kx];
                                        let wv = if abs { wv.abs() } else { wv };
                                        g[(c * h + iy as usize) * w_in + ix as usize] += wv * vo;
                                    }
                                }
                            }
                        }
                    }
                }
                Tensor::new(self.in_shape(), g).expect("conv adjoint")
            }
        }
    }

    /// Materialize the layer as an explicit `[out_dim, in_dim]` matrix, by
    /// applying the forward map (minus bias) to basis vectors. Only the
    /// oracle module uses this; it is bit-identical to `forward` by
    /// construction.
    pub fn to_dense_matrix(&self) -> Vec<Vec<f64>> {
        let (din, dout) = (self.in_dim(), self.out_dim());
        let mut cols = Vec::with_capacity(din);
        for i in 0..din {
            let mut e = vec![0.0; din];
            e[i] = 1.0;
            cols.push(self.apply_kernel(&e, false, false).into_data());
        }
        let mut rows = vec![vec![0.0; din]; dout];
        for (i, col) in cols.iter().enumerate() {
            for o in 0..dout {
                rows[o][i] = col[o];
            }
        }
        rows
    }
}

/// A feedforward network: affine layers with elementwise activations
/// between consecutive pairs.
#[derive(Debug, Clone)]
pub struct Network {
    affines: Vec<AffineLayer>,
    activations: Vec<Activation>,
}

impl Network {
    /// Builds a network from `n` affine layers and the `n - 1` activations
    /// between them, checking that consecutive shapes compose. Between a
    /// conv layer and a dense layer the conv output is flattened row-major.
    pub fn new(affines: Vec<AffineLayer>, activations: Vec<Activation>) -> Result<Self> {
        if affines.is_empty() {
            return Err(Error::InvalidNetwork("need at least one affine layer".into()));
        }
        if activations.len() + 1 != affines.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} affine layers need {} activations, got {}",
                affines.len(),
                affines.len() - 1,
                activations.len()
            )));
        }
        for k in 0..affines.len() - 1 {
            if affines[k].out_dim() != affines[k + 1].in_dim() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} output dim {} does not match layer {} input dim {}",
                    k,
                    affines[k].out_dim(),
                    k + 1,
                    affines[k + 1].in_dim()
                )));
            }
        }
        Ok(Self {
            affines,
            activations,
        })
    }

    /// Number of affine layers.
    pub fn num_affine(&self) -> usize {
        self.affines.len()
    }

    /// Number of hidden (activation) layers, `num_affine() - 1`.
    pub fn num_hidden(&self) -> usize {
        self.activations.len()
    }

    pub fn affine(&self, k: usize) -> &AffineLayer {
        &self.affines[k]
    }

    pub fn activation(&self, k: usize) -> Activation {
        self.activations[k]
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.affines[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.affines.last().unwrap().out_dim()
    }

    /// Width of the pre-activation vector produced by affine layer `k`.
    pub fn layer_width(&self, k: usize) -> usize {
        self.affines[k].out_dim()
    }

    pub fn all_relu(&self) -> bool {
        self.activations.iter().all(|a| *a == Activation::Relu)
    }

    /// Plain forward pass.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_len(self.input_dim(), "network_eval input")?;
        let mut cur = self.affines[0].forward(x)?;
        for k in 0..self.activations.len() {
            let act = self.activations[k];
            for v in cur.data_mut() {
                *v = act.apply(*v);
            }
            cur = self.affines[k + 1].forward(&cur)?;
        }
        Ok(cur)
    }
}
