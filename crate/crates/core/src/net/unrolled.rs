use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{ComplexImage, RealFeatureMap};
use crate::sense::{self, CoilSensitivities, MultiCoilKSpace, SamplingMask};

use super::conv::{conv_backward, conv_forward};
use super::{Activation, BlockParams, ConvLayer, GradientSet, NetworkParams, Variant};

fn check_chain(layers: &[ConvLayer], first_in: Option<usize>, last_out: Option<usize>) -> Result<()> {
    let first = layers.first().ok_or_else(|| Error::invalid("operation needs at least one layer"))?;
    if let Some(c) = first_in {
        if first.in_channels != c {
            return Err(Error::shape(format!("first layer takes {} channels, expected {c}", first.in_channels)));
        }
    }
    if let Some(c) = last_out {
        let last = layers.last().expect("non-empty");
        if last.out_channels != c {
            return Err(Error::shape(format!("last layer emits {} channels, expected {c}", last.out_channels)));
        }
    }
    for (l, pair) in layers.windows(2).enumerate() {
        if pair[0].out_channels != pair[1].in_channels {
            return Err(Error::shape(format!("layers {l} and {} do not chain", l + 1)));
        }
    }
    for layer in layers {
        layer.validate()?;
    }
    Ok(())
}

/// Applies `layers` with the activation between consecutive layers (none after
/// the last). Returns the output and the input seen by every layer.
fn run_layers(input: RealFeatureMap, layers: &[ConvLayer], act: Activation) -> (RealFeatureMap, Vec<RealFeatureMap>) {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut cur = input;
    for (l, layer) in layers.iter().enumerate() {
        let mut next = conv_forward(&cur, layer);
        if l + 1 < layers.len() && act == Activation::Relu {
            for v in next.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        inputs.push(cur);
        cur = next;
    }
    (cur, inputs)
}

/// Backpropagates through [`run_layers`]; returns the gradient at the first
/// layer's input when `need_input_grad` is set.
fn backprop_layers(
    inputs: &[RealFeatureMap],
    layers: &[ConvLayer],
    grads: &mut [ConvLayer],
    act: Activation,
    d_out: RealFeatureMap,
    need_input_grad: bool,
) -> Option<RealFeatureMap> {
    let mut d = d_out;
    for l in (0..layers.len()).rev() {
        let need = l > 0 || need_input_grad;
        let d_in = conv_backward(&inputs[l], &layers[l], d.data(), &mut grads[l], need)?;
        d = d_in;
        if l > 0 && act == Activation::Relu {
            // inputs[l] = relu(z); the derivative is 1 where z > 0, else 0
            for (g, &h) in d.data_mut().iter_mut().zip(inputs[l].data()) {
                if h <= 0.0 {
                    *g = 0.0;
                }
            }
        }
    }
    Some(d)
}

#[inline]
fn shrink(v: f64, theta: f64) -> f64 {
    if v > theta {
        v - theta
    } else if v < -theta {
        v + theta
    } else {
        0.0
    }
}

fn threshold(gamma: f64, lambda: f64) -> f64 {
    (gamma * lambda).abs()
}

/// `P_s t_s`: realify, then the forward CNN with ReLU between layers.
pub fn forward_operation(t: &ComplexImage, layers: &[ConvLayer]) -> Result<RealFeatureMap> {
    check_chain(layers, Some(2), None)?;
    Ok(run_layers(RealFeatureMap::from_complex(t), layers, Activation::Relu).0)
}

/// `sign(a)·max(|a| − |γλ|, 0)` elementwise.
pub fn learned_soft_threshold(a: &RealFeatureMap, gamma: f64, lambda: f64) -> RealFeatureMap {
    let theta = threshold(gamma, lambda);
    let mut out = a.clone();
    for v in out.data_mut() {
        *v = shrink(*v, theta);
    }
    out
}

/// `Q_s ã`: the backward CNN, with its 2 output channels read as `re + i·im`.
pub fn backward_operation(coeffs: &RealFeatureMap, layers: &[ConvLayer]) -> Result<ComplexImage> {
    check_chain(layers, Some(coeffs.channels()), Some(2))?;
    run_layers(coeffs.clone(), layers, Activation::Relu).0.to_complex()
}

struct BlockTrace {
    /// `Aᴴ(y − A x_s)`
    g: ComplexImage,
    p_inputs: Vec<RealFeatureMap>,
    /// Forward-operation output before shrinkage.
    a: RealFeatureMap,
    q_inputs: Vec<RealFeatureMap>,
    theta: f64,
}

/// Everything the reverse pass needs from one forward evaluation.
pub struct ForwardTrace {
    pub outputs: Vec<ComplexImage>,
    blocks: Vec<BlockTrace>,
}

impl ForwardTrace {
    /// On/off state of every ReLU and every shrinkage unit. Two parameter
    /// points with equal patterns lie in the same smooth piece of the loss.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut bits = Vec::new();
        for b in &self.blocks {
            for m in b.p_inputs.iter().skip(1).chain(b.q_inputs.iter().skip(1)) {
                bits.extend(m.data().iter().map(|&v| v > 0.0));
            }
            bits.extend(b.a.data().iter().map(|&v| v.abs() > b.theta));
        }
        bits
    }
}

fn block_forward(
    x: &ComplexImage,
    y: &[ComplexImage],
    c: &CoilSensitivities,
    u: &SamplingMask,
    block: &BlockParams,
    variant: Variant,
    act: Activation,
) -> (ComplexImage, BlockTrace) {
    let (t, g) = sense::dc_step(x, y, c, u, block.gamma);
    let (a, p_inputs) = run_layers(RealFeatureMap::from_complex(&t), &block.forward, act);
    let theta = threshold(block.gamma, block.lambda);
    let mut shrunk = a.clone();
    for v in shrunk.data_mut() {
        *v = shrink(*v, theta);
    }
    let (q, q_inputs) = run_layers(shrunk, &block.backward, act);
    let mut out = q.to_complex().expect("backward operation emits 2 channels");
    if variant == Variant::ResNet {
        out.add_assign(&t);
    }
    (
        out,
        BlockTrace {
            g,
            p_inputs,
            a,
            q_inputs,
            theta,
        },
    )
}

fn check_problem(y: &MultiCoilKSpace, c: &CoilSensitivities, u: &SamplingMask) -> Result<()> {
    if y.dims() != c.dims() || u.dims() != c.dims() || y.coils() != c.coils() {
        return Err(Error::shape("k-space, coil maps and mask disagree"));
    }
    Ok(())
}

/// One iteration block (ReLU activations).
pub fn iteration_block(
    x: &ComplexImage,
    y: &MultiCoilKSpace,
    c: &CoilSensitivities,
    u: &SamplingMask,
    block: &BlockParams,
    variant: Variant,
) -> Result<ComplexImage> {
    check_problem(y, c, u)?;
    if x.dims() != y.dims() {
        return Err(Error::shape("iterate does not match k-space"));
    }
    check_chain(&block.forward, Some(2), None)?;
    check_chain(&block.backward, Some(block.forward.last().expect("non-empty").out_channels), Some(2))?;
    Ok(block_forward(x, y.data(), c, u, block, variant, Activation::Relu).0)
}

pub(crate) fn forward_traced(
    y: &MultiCoilKSpace,
    c: &CoilSensitivities,
    u: &SamplingMask,
    params: &NetworkParams,
) -> Result<ForwardTrace> {
    check_problem(y, c, u)?;
    params.validate()?;
    let mut x = sense::adjoint_unchecked(y.data(), c, u);
    let mut outputs = Vec::with_capacity(params.blocks.len());
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (next, trace) = block_forward(&x, y.data(), c, u, block, params.shape.variant, params.shape.activation);
        outputs.push(next.clone());
        blocks.push(trace);
        x = next;
    }
    Ok(ForwardTrace { outputs, blocks })
}

/// Outputs `x_2, …, x_{S+1}` of every block, starting from the zero-filled
/// image `x_1 = Aᴴ y`. The last element is the reconstruction.
pub fn network_forward(
    y: &MultiCoilKSpace,
    c: &CoilSensitivities,
    u: &SamplingMask,
    params: &NetworkParams,
) -> Result<Vec<ComplexImage>> {
    Ok(forward_traced(y, c, u, params)?.outputs)
}

/// `Σ_s ‖x_truth − x_s‖²` over all block outputs.
pub fn loss(outputs: &[ComplexImage], truth: &ComplexImage) -> Result<f64> {
    let mut total = 0.0;
    for (s, x) in outputs.iter().enumerate() {
        truth.check_same_shape(x, &format!("block output {s}"))?;
        total += truth.sub(x).norm_sqr();
    }
    Ok(total)
}

/// Loss and exact gradients with respect to every parameter, by reverse
/// traversal of the unrolled graph.
pub fn network_backward(
    y: &MultiCoilKSpace,
    c: &CoilSensitivities,
    u: &SamplingMask,
    params: &NetworkParams,
    truth: &ComplexImage,
) -> Result<(f64, GradientSet)> {
    if truth.dims() != y.dims() {
        return Err(Error::shape("ground truth does not match k-space"));
    }
    let trace = forward_traced(y, c, u, params)?;
    let value = loss(&trace.outputs, truth)?;
    let grads = backward_from_trace(&trace, c, u, params, truth);
    Ok((value, grads))
}

pub(crate) fn backward_from_trace(
    trace: &ForwardTrace,
    c: &CoilSensitivities,
    u: &SamplingMask,
    params: &NetworkParams,
    truth: &ComplexImage,
) -> GradientSet {
    let mut grads = GradientSet::zeros_like(params);
    let variant = params.shape.variant;
    let act = params.shape.activation;
    let (h, w) = truth.dims();
    // gradient flowing into the current block's output from later blocks
    let mut carry = ComplexImage::zeros(h, w);

    for s in (0..params.blocks.len()).rev() {
        let block = &params.blocks[s];
        let bt = &trace.blocks[s];
        let gb = grads.block_mut(s);

        // ∂/∂x_{s+1} of ‖truth − x_{s+1}‖² plus the downstream contribution
        let mut g_out = trace.outputs[s].sub(truth);
        g_out.scale(2.0);
        g_out.add_assign(&carry);

        let d_q = RealFeatureMap::from_complex(&g_out);
        let d_shrunk = backprop_layers(&bt.q_inputs, &block.backward, &mut gb.backward, act, d_q, true)
            .expect("input gradient requested");

        let mut d_a = d_shrunk;
        let mut d_theta = 0.0;
        for (g, &a) in d_a.data_mut().iter_mut().zip(bt.a.data()) {
            if a > bt.theta {
                d_theta -= *g;
            } else if a < -bt.theta {
                d_theta += *g;
            } else {
                *g = 0.0;
            }
        }

        let d_f0 = backprop_layers(&bt.p_inputs, &block.forward, &mut gb.forward, act, d_a, true)
            .expect("input gradient requested");
        let mut g_t = d_f0.to_complex().expect("2-channel input");
        if variant == Variant::ResNet {
            g_t.add_assign(&g_out);
        }

        // θ = |γλ|
        let prod = block.gamma * block.lambda;
        let sign = if prod > 0.0 {
            1.0
        } else if prod < 0.0 {
            -1.0
        } else {
            0.0
        };
        let dc_gamma: f64 = g_t.data().iter().zip(bt.g.data()).map(|(a, b)| (a.conj() * b).re).sum();
        gb.gamma = dc_gamma + d_theta * sign * block.lambda;
        gb.lambda = d_theta * sign * block.gamma;

        if s > 0 {
            // t = x + γ Aᴴ(y − A x)  ⇒  ∂x = ∂t − γ AᴴA ∂t
            let normal = sense::normal_unchecked(&g_t, c, u);
            let mut g_x = g_t;
            g_x.axpy(Complex64::new(-block.gamma, 0.0), &normal);
            carry = g_x;
        }
    }
    grads
}

/// Loss and activation pattern at `params`, for finite-difference checks.
pub(crate) fn loss_and_pattern(
    y: &MultiCoilKSpace,
    c: &CoilSensitivities,
    u: &SamplingMask,
    params: &NetworkParams,
    truth: &ComplexImage,
) -> Result<(f64, Vec<bool>)> {
    let trace = forward_traced(y, c, u, params)?;
    Ok((loss(&trace.outputs, truth)?, trace.activation_pattern()))
}
