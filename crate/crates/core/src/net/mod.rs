//! Unrolled projected-ISTA network.
//!
//! Each iteration block runs a data-consistency step with learnable step size
//! `γ_s`, a learnable CNN analysis operator `P_s`, real soft-thresholding with
//! threshold `|γ_s λ_s|`, and a CNN synthesis operator `Q_s`. The residual
//! variant adds the data-consistency output back onto `Q_s`'s result.
//! Complex images enter and leave the CNNs as two real channels.

mod conv;
pub(crate) mod unrolled;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conv::conv2d_same;
pub use unrolled::{
    backward_operation, forward_operation, iteration_block, learned_soft_threshold, loss, network_backward,
    network_forward, ForwardTrace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `x_{s+1} = t_s + Q_s(T(P_s t_s))`
    ResNet,
    /// `x_{s+1} = Q_s(T(P_s t_s))`
    Net,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resnet" => Ok(Variant::ResNet),
            "net" => Ok(Variant::Net),
            other => Err(Error::invalid(format!("unknown variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::ResNet => "resnet",
            Variant::Net => "net",
        })
    }
}

/// Nonlinearity between convolution layers. `Identity` exists for gradient
/// checking on a purely linear network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

/// Structural hyper-parameters of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    /// Number of iteration blocks.
    pub blocks: usize,
    /// Convolution layers in each of `P_s` and `Q_s`.
    pub layers: usize,
    /// Filters per layer.
    pub channels: usize,
    /// Square kernel size (odd).
    pub kernel: usize,
    pub variant: Variant,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkShape {
    /// 10 blocks, 3 layers of 48 3×3 filters.
    pub fn full(variant: Variant) -> Self {
        Self {
            blocks: 10,
            layers: 3,
            channels: 48,
            kernel: 3,
            variant,
            activation: Activation::Relu,
        }
    }

    /// 5 blocks, 3 layers of 16 3×3 filters.
    pub fn desk(variant: Variant) -> Self {
        Self {
            blocks: 5,
            layers: 3,
            channels: 16,
            kernel: 3,
            variant,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.layers == 0 || self.channels == 0 {
            return Err(Error::invalid("blocks, layers and channels must all be at least 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    /// (in, out) channel counts of the forward-operation layers.
    pub fn forward_channels(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| (if l == 0 { 2 } else { self.channels }, self.channels))
            .collect()
    }

    /// (in, out) channel counts of the backward-operation layers.
    pub fn backward_channels(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| (self.channels, if l + 1 == self.layers { 2 } else { self.channels }))
            .collect()
    }
}

/// One convolution layer: `weights[o][i][ky][kx]` plus a bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(out_channels: usize, in_channels: usize, kernel: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let layer = Self {
            out_channels,
            in_channels,
            kernel,
            weights,
            bias,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.out_channels == 0 || self.in_channels == 0 {
            return Err(Error::invalid("layer channel counts must be positive"));
        }
        if self.weights.len() != self.out_channels * self.in_channels * self.kernel * self.kernel {
            return Err(Error::shape("weight tensor length does not match layer shape"));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::shape("bias length does not match output channels"));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("layer contains non-finite parameters"));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    pub fn weight_mut(&mut self, o: usize, i: usize, ky: usize, kx: usize) -> &mut f64 {
        let k = self.kernel;
        &mut self.weights[((o * self.in_channels + i) * k + ky) * k + kx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub gamma: f64,
    pub lambda: f64,
    pub forward: Vec<ConvLayer>,
    pub backward: Vec<ConvLayer>,
}

/// Which parameter tensor of a block an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorKind {
    Gamma,
    Lambda,
    ForwardWeight(usize),
    ForwardBias(usize),
    BackwardWeight(usize),
    BackwardBias(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId {
    pub block: usize,
    pub kind: TensorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub shape: NetworkShape,
    pub blocks: Vec<BlockParams>,
}

pub const GAMMA_INIT: f64 = 1.0;
pub const LAMBDA_INIT: f64 = 0.001;

impl NetworkParams {
    /// All convolution weights and biases zero; `γ_s`, `λ_s` at their initial values.
    pub fn zeros(shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        let block = BlockParams {
            gamma: GAMMA_INIT,
            lambda: LAMBDA_INIT,
            forward: shape
                .forward_channels()
                .into_iter()
                .map(|(i, o)| ConvLayer::zeros(o, i, shape.kernel))
                .collect(),
            backward: shape
                .backward_channels()
                .into_iter()
                .map(|(i, o)| ConvLayer::zeros(o, i, shape.kernel))
                .collect(),
        };
        Ok(Self {
            shape,
            blocks: vec![block; shape.blocks],
        })
    }

    /// Checks that every block matches `shape`.
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.blocks.len() != self.shape.blocks {
            return Err(Error::shape(format!(
                "expected {} blocks, found {}",
                self.shape.blocks,
                self.blocks.len()
            )));
        }
        let fwd = self.shape.forward_channels();
        let bwd = self.shape.backward_channels();
        for (s, b) in self.blocks.iter().enumerate() {
            if !b.gamma.is_finite() || !b.lambda.is_finite() {
                return Err(Error::invalid(format!("block {s} has non-finite gamma or lambda")));
            }
            for (layers, chans, name) in [(&b.forward, &fwd, "forward"), (&b.backward, &bwd, "backward")] {
                if layers.len() != chans.len() {
                    return Err(Error::shape(format!("block {s} {name} operation has {} layers", layers.len())));
                }
                for (l, (layer, &(i, o))) in layers.iter().zip(chans.iter()).enumerate() {
                    layer.validate()?;
                    if layer.in_channels != i || layer.out_channels != o || layer.kernel != self.shape.kernel {
                        return Err(Error::shape(format!("block {s} {name} layer {l} has the wrong shape")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Every parameter tensor in declaration order.
    pub fn tensors(&self) -> Vec<(TensorId, &[f64])> {
        let mut out = Vec::new();
        for (s, b) in self.blocks.iter().enumerate() {
            let id = |kind| TensorId { block: s, kind };
            out.push((id(TensorKind::Gamma), std::slice::from_ref(&b.gamma)));
            out.push((id(TensorKind::Lambda), std::slice::from_ref(&b.lambda)));
            for (l, layer) in b.forward.iter().enumerate() {
                out.push((id(TensorKind::ForwardWeight(l)), layer.weights.as_slice()));
                out.push((id(TensorKind::ForwardBias(l)), layer.bias.as_slice()));
            }
            for (l, layer) in b.backward.iter().enumerate() {
                out.push((id(TensorKind::BackwardWeight(l)), layer.weights.as_slice()));
                out.push((id(TensorKind::BackwardBias(l)), layer.bias.as_slice()));
            }
        }
        out
    }

    /// Mutable view of every parameter tensor, same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in self.blocks.iter_mut() {
            out.push(std::slice::from_mut(&mut b.gamma));
            out.push(std::slice::from_mut(&mut b.lambda));
            for layer in b.forward.iter_mut() {
                out.push(layer.weights.as_mut_slice());
                out.push(layer.bias.as_mut_slice());
            }
            for layer in b.backward.iter_mut() {
                out.push(layer.weights.as_mut_slice());
                out.push(layer.bias.as_mut_slice());
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn same_structure(&self, other: &NetworkParams) -> bool {
        self.shape == other.shape
            && self
                .tensors()
                .iter()
                .zip(other.tensors().iter())
                .all(|((a, x), (b, y))| a == b && x.len() == y.len())
    }
}

/// Gradients of the loss, one tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    inner: NetworkParams,
}

impl GradientSet {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        let mut inner = params.clone();
        for t in inner.tensors_mut() {
            t.fill(0.0);
        }
        Self { inner }
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.inner.shape
    }

    pub fn block(&self, s: usize) -> &BlockParams {
        &self.inner.blocks[s]
    }

    pub(crate) fn block_mut(&mut self, s: usize) -> &mut BlockParams {
        &mut self.inner.blocks[s]
    }

    pub fn tensors(&self) -> Vec<(TensorId, &[f64])> {
        self.inner.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.inner.tensors_mut()
    }

    pub fn congruent_with(&self, params: &NetworkParams) -> bool {
        self.inner.same_structure(params)
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, (_, b)) in self.inner.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Views the gradients as a parameter-shaped container.
    pub fn as_params(&self) -> &NetworkParams {
        &self.inner
    }
}

/// Glorot-uniform weights on `±√(6/(fan_in + fan_out))` with kernel area in
/// both fan counts; zero biases; `γ_s = 1`, `λ_s = 0.001`.
pub fn xavier_init(shape: &NetworkShape, seed: u64) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(*shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area = shape.kernel * shape.kernel;
    for block in params.blocks.iter_mut() {
        for layer in block.forward.iter_mut().chain(block.backward.iter_mut()) {
            let fan_in = layer.in_channels * area;
            let fan_out = layer.out_channels * area;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for w in layer.weights.iter_mut() {
                *w = dist.sample(&mut rng);
            }
        }
    }
    Ok(params)
}
