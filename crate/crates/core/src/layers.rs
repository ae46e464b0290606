//! Parameterised layers built on [`crate::ops`], with named tensor visiting
//! and cost accounting.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{self, BnCache, ConvGeometry};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Role of a named tensor inside a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// `outC × inC/groups × kh × kw`
    ConvWeight,
    /// `D × K`
    LinearWeight,
    Bias,
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
}

impl TensorKind {
    /// Learned tensors are counted as parameters and updated by the optimiser.
    pub fn is_learned(self) -> bool {
        !matches!(self, TensorKind::RunningMean | TensorKind::RunningVar)
    }

    /// Extents as written to weight files: rank 4 for convolution kernels,
    /// rank 2 for linear weights, rank 1 otherwise.
    pub fn logical_dims(self, shape: Shape) -> Vec<usize> {
        match self {
            TensorKind::ConvWeight => shape.dims().to_vec(),
            TensorKind::LinearWeight => vec![shape.n, shape.c],
            _ => vec![shape.volume()],
        }
    }
}

pub type Visitor<'a, T> = dyn FnMut(&str, TensorKind, &Tensor<T>) + 'a;
pub type VisitorMut<'a, T> = dyn FnMut(&str, TensorKind, &mut Tensor<T>) + 'a;

/// Named access to every tensor a layer owns, in a fixed order.
pub trait Parameterized<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>);
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>);

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, _, t| t.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, k, t| {
            if k.is_learned() {
                n += t.len();
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// One row of a cost breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    pub params: u64,
    pub madds: u64,
    /// (C, H, W) of the layer output.
    pub output: (usize, usize, usize),
}

/// Convolution layer. Dispatches to the direct depthwise kernel when every
/// group holds exactly one input and one output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geom: ConvGeometry,
}

impl<T: Scalar> Conv<T> {
    pub fn new(in_channels: usize, out_channels: usize, geom: ConvGeometry, bias: bool) -> Self {
        let w = Shape::new(out_channels, in_channels / geom.groups.max(1), geom.kernel.0, geom.kernel.1);
        Conv {
            weight: Tensor::zeros(w),
            bias: bias.then(|| Tensor::zeros(Shape::new(1, out_channels, 1, 1))),
            geom,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, ConvGeometry::pointwise(), false)
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::new(channels, channels, ConvGeometry::new(kernel, stride, padding).with_groups(channels), false)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c * self.geom.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn is_depthwise(&self) -> bool {
        let s = self.weight.shape();
        self.geom.groups > 1 && s.c == 1 && s.n == self.geom.groups
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.is_depthwise() && self.bias.is_none() {
            ops::depthwise_conv2d(x, &self.weight, &self.geom)
        } else {
            ops::conv2d(x, &self.weight, self.bias.as_ref().map(|b| b.data()), &self.geom)
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        if self.is_depthwise() && self.bias.is_none() {
            let (dx, dw) = ops::depthwise_conv2d_backward(x, &self.weight, &self.geom, grad)?;
            self.weight.accumulate_grad(&dw);
            Ok(dx)
        } else {
            let g = ops::conv2d_backward(x, &self.weight, &self.geom, grad)?;
            self.weight.accumulate_grad(&g.weight);
            if let Some(b) = self.bias.as_mut() {
                b.accumulate_grad(&g.bias);
            }
            Ok(g.input)
        }
    }

    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        if input.0 != self.in_channels() {
            return Err(Error::ShapeMismatch {
                op: "conv",
                axis: "input channels",
                expected: self.in_channels(),
                actual: input.0,
            });
        }
        let (h, w) = self.geom.output_hw(input.1, input.2)?;
        Ok((self.out_channels(), h, w))
    }

    /// `outH·outW·outC·kh·kw·inC/groups`
    pub fn cost(&self, name: String, input: (usize, usize, usize)) -> Result<LayerCost> {
        let out = self.output_shape(input)?;
        let s = self.weight.shape();
        let madds = (out.0 * out.1 * out.2) as u64 * (s.c * s.h * s.w) as u64;
        Ok(LayerCost {
            name,
            kind: if self.is_depthwise() { "dwconv" } else { "conv" },
            params: self.param_count() as u64,
            madds,
            output: out,
        })
    }
}

impl<T: Scalar> Parameterized<T> for Conv<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "weight"), TensorKind::ConvWeight, &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), TensorKind::Bias, b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        f(&join(prefix, "weight"), TensorKind::ConvWeight, &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), TensorKind::Bias, b);
        }
    }
}

/// Batch normalisation with learned scale/shift and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        let v = Shape::new(1, channels, 1, 1);
        BatchNorm {
            scale: Tensor::full(v, T::one()),
            shift: Tensor::zeros(v),
            running_mean: Tensor::zeros(v),
            running_var: Tensor::full(v, T::one()),
            momentum: T::from_f64(ops::BN_MOMENTUM),
            eps: T::from_f64(ops::BN_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Inference: normalise with running statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::batch_norm_infer(x, self.scale.data(), self.shift.data(), self.running_mean.data(), self.running_var.data(), self.eps)
    }

    /// Training: normalise with batch statistics and fold them into the
    /// running statistics.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let (y, cache) = ops::batch_norm(x, self.scale.data(), self.shift.data(), self.eps)?;
        ops::update_running_stats(&cache, self.running_mean.data_mut(), self.running_var.data_mut(), self.momentum);
        Ok((y, cache))
    }

    pub fn backward(&mut self, cache: &BnCache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let (dx, dg, db) = ops::batch_norm_backward(cache, self.scale.data(), grad);
        self.scale.accumulate_grad(&dg);
        self.shift.accumulate_grad(&db);
        dx
    }

    pub fn cost(&self, name: String, input: (usize, usize, usize)) -> LayerCost {
        LayerCost {
            name,
            kind: "bn",
            params: 2 * self.channels() as u64,
            madds: 0,
            output: input,
        }
    }
}

impl<T: Scalar> Parameterized<T> for BatchNorm<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "scale"), TensorKind::BnScale, &self.scale);
        f(&join(prefix, "shift"), TensorKind::BnShift, &self.shift);
        f(&join(prefix, "running_mean"), TensorKind::RunningMean, &self.running_mean);
        f(&join(prefix, "running_var"), TensorKind::RunningVar, &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        f(&join(prefix, "scale"), TensorKind::BnScale, &mut self.scale);
        f(&join(prefix, "shift"), TensorKind::BnShift, &mut self.shift);
        f(&join(prefix, "running_mean"), TensorKind::RunningMean, &mut self.running_mean);
        f(&join(prefix, "running_var"), TensorKind::RunningVar, &mut self.running_var);
    }
}

/// Fully connected layer with a `D × K` weight and a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Tensor::zeros(Shape::matrix(inputs, outputs)),
            bias: Tensor::zeros(Shape::new(1, outputs, 1, 1)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape().n
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape().c
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear(x, &self.weight, self.bias.data())
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (dx, dw, db) = ops::linear_backward(x, &self.weight, grad)?;
        self.weight.accumulate_grad(&dw);
        self.bias.accumulate_grad(&db);
        Ok(dx)
    }

    /// `D·K` multiply-adds.
    pub fn cost(&self, name: String) -> LayerCost {
        LayerCost {
            name,
            kind: "linear",
            params: self.param_count() as u64,
            madds: (self.inputs() * self.outputs()) as u64,
            output: (self.outputs(), 1, 1),
        }
    }
}

impl<T: Scalar> Parameterized<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "weight"), TensorKind::LinearWeight, &self.weight);
        f(&join(prefix, "bias"), TensorKind::Bias, &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        f(&join(prefix, "weight"), TensorKind::LinearWeight, &mut self.weight);
        f(&join(prefix, "bias"), TensorKind::Bias, &mut self.bias);
    }
}

/// Convolution → batch norm → optional ReLU6.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn<T> {
    pub conv: Conv<T>,
    pub bn: BatchNorm<T>,
    pub relu6: bool,
}

#[derive(Debug, Clone)]
pub struct ConvBnCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    pre_act: Option<Tensor<T>>,
}

impl<T: Scalar> ConvBn<T> {
    pub fn new(conv: Conv<T>, relu6: bool) -> Self {
        let bn = BatchNorm::new(conv.out_channels());
        ConvBn { conv, bn, relu6 }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.bn.forward(&self.conv.forward(x)?)?;
        Ok(if self.relu6 { ops::relu6(&y) } else { y })
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvBnCache<T>)> {
        let c = self.conv.forward(x)?;
        let (y, bn) = self.bn.forward_train(&c)?;
        let (out, pre_act) = if self.relu6 { (ops::relu6(&y), Some(y)) } else { (y, None) };
        Ok((
            out,
            ConvBnCache {
                input: x.clone(),
                bn,
                pre_act,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvBnCache<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = match &cache.pre_act {
            Some(pre) => ops::relu6_backward(pre, grad),
            None => grad.clone(),
        };
        let g = self.bn.backward(&cache.bn, &g);
        self.conv.backward(&cache.input, &g)
    }

    pub fn costs(&self, prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerCost>) -> Result<(usize, usize, usize)> {
        let c = self.conv.cost(join(prefix, "conv"), input)?;
        let shape = c.output;
        out.push(c);
        out.push(self.bn.cost(join(prefix, "bn"), shape));
        Ok(shape)
    }
}

impl<T: Scalar> Parameterized<T> for ConvBn<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_conv_bn_param_count() {
        let stem = ConvBn::<f32>::new(Conv::new(3, 32, ConvGeometry::new(3, 2, 1), false), true);
        assert_eq!(stem.param_count(), 864 + 64);
        let mut costs = Vec::new();
        let out = stem.costs("stem", (3, 224, 224), &mut costs).unwrap();
        assert_eq!(out, (32, 112, 112));
        assert_eq!(costs[0].madds, 112 * 112 * 32 * 3 * 3 * 3);
        assert_eq!(costs[0].madds, 10_838_016);
    }

    #[test]
    fn visit_names_are_qualified() {
        let l = ConvBn::<f32>::new(Conv::pointwise(4, 8), false);
        let mut names = Vec::new();
        l.visit("blk", &mut |n, _, _| names.push(String::from(n)));
        assert_eq!(names, ["blk.conv.weight", "blk.bn.scale", "blk.bn.shift", "blk.bn.running_mean", "blk.bn.running_var"]);
    }
}
