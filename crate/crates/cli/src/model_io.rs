//! Human-writable JSON formats for networks and verification properties.
//!
//! A model is a list of layers in application order:
//!
//! ```json
//! {"layers": [
//!   {"type": "dense", "weight": [[1.0, -1.0]], "bias": [0.0]},
//!   {"type": "relu"},
//!   {"type": "conv2d", "weight": [[[[1.0]]]], "bias": [0.0], "stride": 1, "padding": 0},
//!   {"type": "sigmoid"}
//! ],
//!  "input_shape": [1, 2, 2]}
//! ```
//!
//! `input_shape` (channels, height, width) is required only when the model
//! contains convolutional layers. A property pairs an input domain with an
//! objective row and a decision threshold:
//!
//! ```json
//! {"domain": {"type": "box", "l": [-1.0], "u": [1.0]},
//!  "objective": [1.0],
//!  "threshold": 0.0}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use bounds_core::domain::InputDomain;
use bounds_core::net::{Activation, AffineLayer, Network};
use bounds_core::Tensor;

use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense {
        weight: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Conv2d {
        weight: Vec<Vec<Vec<Vec<f64>>>>,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
    },
    Relu,
    Sigmoid,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PropertyFile {
    pub domain: DomainSpec,
    pub objective: Vec<f64>,
    #[serde(default)]
    pub threshold: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DomainSpec {
    Box { l: Vec<f64>, u: Vec<f64> },
    L2 { center: Vec<f64>, radius: f64 },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn model_err(context: impl Into<String>) -> impl FnOnce(bounds_core::Error) -> Error {
    let context = context.into();
    move |source| Error::Model { context, source }
}

/// Builds a network from a parsed model file, validating shape
/// composition; errors name the offending layer.
pub fn build_network(file: &ModelFile) -> Result<Network> {
    let mut affines = Vec::new();
    let mut activations = Vec::new();
    // track the spatial shape conv layers see
    let mut cur_hw: Option<(usize, usize)> = file
        .input_shape
        .as_ref()
        .map(|s| match s.len() {
            3 => Ok((s[1], s[2])),
            2 => Ok((s[0], s[1])),
            _ => Err(Error::Invalid(format!(
                "input_shape must have 2 or 3 entries, got {:?}",
                s
            ))),
        })
        .transpose()?;

    for (idx, layer) in file.layers.iter().enumerate() {
        match layer {
            LayerSpec::Dense { weight, bias } => {
                let rows = weight.len();
                let cols = weight.first().map(|r| r.len()).unwrap_or(0);
                if weight.iter().any(|r| r.len() != cols) {
                    return Err(Error::Invalid(format!(
                        "layer {idx}: ragged dense weight matrix"
                    )));
                }
                let data: Vec<f64> = weight.iter().flatten().copied().collect();
                let w = Tensor::new(vec![rows, cols], data)
                    .map_err(model_err(format!("layer {idx} weight")))?;
                let b = Tensor::vector(bias.clone());
                affines.push(
                    AffineLayer::dense(w, b).map_err(model_err(format!("layer {idx}")))?,
                );
                cur_hw = None;
            }
            LayerSpec::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let hw = cur_hw.ok_or_else(|| {
                    Error::Invalid(format!(
                        "layer {idx}: conv2d needs input_shape (or a preceding conv layer)"
                    ))
                })?;
                let (oc, ic) = (weight.len(), weight.first().map(|c| c.len()).unwrap_or(0));
                let kh = weight
                    .first()
                    .and_then(|c| c.first())
                    .map(|k| k.len())
                    .unwrap_or(0);
                let kw = weight
                    .first()
                    .and_then(|c| c.first())
                    .and_then(|k| k.first())
                    .map(|r| r.len())
                    .unwrap_or(0);
                let mut data = Vec::with_capacity(oc * ic * kh * kw);
                for co in weight {
                    if co.len() != ic {
                        return Err(Error::Invalid(format!(
                            "layer {idx}: ragged conv kernel"
                        )));
                    }
                    for ci in co {
                        for krow in ci {
                            if krow.len() != kw || ci.len() != kh {
                                return Err(Error::Invalid(format!(
                                    "layer {idx}: ragged conv kernel"
                                )));
                            }
                            data.extend_from_slice(krow);
                        }
                    }
                }
                let w = Tensor::new(vec![oc, ic, kh, kw], data)
                    .map_err(model_err(format!("layer {idx} weight")))?;
                let b = Tensor::vector(bias.clone());
                let conv = AffineLayer::conv2d(w, b, *stride, *padding, hw)
                    .map_err(model_err(format!("layer {idx}")))?;
                let out = conv.out_shape();
                cur_hw = Some((out[1], out[2]));
                affines.push(conv);
            }
            LayerSpec::Relu => activations.push(Activation::Relu),
            LayerSpec::Sigmoid => activations.push(Activation::Sigmoid),
        }
        // the sequence must alternate affine, activation, affine, ...
        let affine_count = affines.len();
        let act_count = activations.len();
        if act_count > affine_count || affine_count > act_count + 1 {
            return Err(Error::Invalid(format!(
                "layer {idx}: layers must alternate affine and activation"
            )));
        }
    }
    Network::new(affines, activations).map_err(model_err("model"))
}

pub fn load_model(path: &Path) -> Result<Network> {
    build_network(&read_json(path)?)
}

/// Serializes a network back into the model file format.
pub fn model_to_file(net: &Network) -> ModelFile {
    let mut layers = Vec::new();
    let mut input_shape = None;
    for k in 0..net.num_affine() {
        match net.affine(k) {
            AffineLayer::Dense { weight, bias } => {
                let (rows, cols) = (weight.shape()[0], weight.shape()[1]);
                layers.push(LayerSpec::Dense {
                    weight: (0..rows)
                        .map(|r| weight.data()[r * cols..(r + 1) * cols].to_vec())
                        .collect(),
                    bias: bias.data().to_vec(),
                });
            }
            conv @ AffineLayer::Conv2d {
                weight,
                bias,
                stride,
                padding,
                ..
            } => {
                if k == 0 {
                    input_shape = Some(conv.in_shape());
                }
                let s = weight.shape();
                let (oc, ic, kh, kw) = (s[0], s[1], s[2], s[3]);
                let at = |o: usize, c: usize, y: usize, x: usize| {
                    weight.data()[((o * ic + c) * kh + y) * kw + x]
                };
                layers.push(LayerSpec::Conv2d {
                    weight: (0..oc)
                        .map(|o| {
                            (0..ic)
                                .map(|c| {
                                    (0..kh)
                                        .map(|y| (0..kw).map(|x| at(o, c, y, x)).collect())
                                        .collect()
                                })
                                .collect()
                        })
                        .collect(),
                    bias: bias.data().to_vec(),
                    stride: *stride,
                    padding: *padding,
                });
            }
        }
        if k < net.num_hidden() {
            layers.push(match net.activation(k) {
                Activation::Relu => LayerSpec::Relu,
                Activation::Sigmoid => LayerSpec::Sigmoid,
            });
        }
    }
    ModelFile {
        layers,
        input_shape,
    }
}

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&model_to_file(net)).expect("model serializes");
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A loaded property: domain, objective row and threshold.
#[derive(Debug, Clone)]
pub struct LoadedProperty {
    pub domain: InputDomain,
    pub objective: Tensor,
    pub threshold: f64,
}

pub fn load_property(path: &Path) -> Result<LoadedProperty> {
    let file: PropertyFile = read_json(path)?;
    let domain = match file.domain {
        DomainSpec::Box { l, u } => {
            InputDomain::bounded(Tensor::vector(l), Tensor::vector(u))
                .map_err(model_err("property domain"))?
        }
        DomainSpec::L2 { center, radius } => {
            InputDomain::l2_ball(Tensor::vector(center), radius)
                .map_err(model_err("property domain"))?
        }
    };
    Ok(LoadedProperty {
        domain,
        objective: Tensor::vector(file.objective),
        threshold: file.threshold,
    })
}

pub fn save_property(prop: &PropertyFile, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(prop).expect("property serializes");
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
