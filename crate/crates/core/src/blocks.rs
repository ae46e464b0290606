//! FeatherNet building blocks: the inverted residual family (BlockA/B/C),
//! squeeze-and-excitation gating, and the streaming module that replaces
//! global average pooling.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::{join, Conv, ConvBn, ConvBnCache, LayerCost, Linear, Parameterized, Visitor, VisitorMut};
use crate::ops::{self, ConvGeometry};
use crate::scalar::Scalar;
use crate::tensor::{expect_dim, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// Stride-1 inverted residual with identity skip when widths match.
    A,
    /// Stride-2 inverted residual plus an average-pooling shortcut branch.
    B,
    /// Stride-2 inverted residual without a shortcut.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Expansion factor applied to the input width.
    pub expansion: usize,
    pub stride: usize,
    pub kind: BlockKind,
}

impl BlockConfig {
    pub fn new(kind: BlockKind, in_channels: usize, out_channels: usize, expansion: usize) -> Self {
        let stride = if kind == BlockKind::A { 1 } else { 2 };
        BlockConfig {
            in_channels,
            out_channels,
            expansion,
            stride,
            kind,
        }
    }

    pub fn expanded(&self) -> usize {
        self.expansion * self.in_channels
    }

    pub fn has_identity_skip(&self) -> bool {
        self.kind == BlockKind::A && self.in_channels == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.expansion == 0 {
            return Err(Error::invalid(format!("block: channels and expansion must be positive: {self:?}")));
        }
        let want = if self.kind == BlockKind::A { 1 } else { 2 };
        if self.stride != want {
            return Err(Error::invalid(format!("block {:?} requires stride {want}, got {}", self.kind, self.stride)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shortcut<T> {
    None,
    Identity,
    /// 2×2/2 average pool → 1×1 conv → BN
    PoolProject(ConvBn<T>),
}

/// Inverted residual block: (1×1 expand → BN → ReLU6) → 3×3 depthwise → BN →
/// ReLU6 → 1×1 linear projection → BN, plus the kind-dependent shortcut.
/// The expansion stage is omitted when the expansion factor is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedResidual<T> {
    config: BlockConfig,
    pub expand: Option<ConvBn<T>>,
    pub depthwise: ConvBn<T>,
    pub project: ConvBn<T>,
    shortcut: Shortcut<T>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    expand: Option<ConvBnCache<T>>,
    depthwise: ConvBnCache<T>,
    project: ConvBnCache<T>,
    shortcut: Option<ConvBnCache<T>>,
    input_shape: Shape,
}

impl<T: Scalar> InvertedResidual<T> {
    pub fn new(config: BlockConfig) -> Result<Self> {
        config.validate()?;
        let hidden = config.expanded();
        let expand = (config.expansion != 1).then(|| ConvBn::new(Conv::pointwise(config.in_channels, hidden), true));
        let depthwise = ConvBn::new(Conv::depthwise(hidden, 3, config.stride, 1), true);
        let project = ConvBn::new(Conv::pointwise(hidden, config.out_channels), false);
        let shortcut = match config.kind {
            BlockKind::A if config.has_identity_skip() => Shortcut::Identity,
            BlockKind::A | BlockKind::C => Shortcut::None,
            BlockKind::B => Shortcut::PoolProject(ConvBn::new(Conv::pointwise(config.in_channels, config.out_channels), false)),
        };
        Ok(InvertedResidual {
            config,
            expand,
            depthwise,
            project,
            shortcut,
        })
    }

    pub fn config(&self) -> &BlockConfig {
        &self.config
    }

    /// The shortcut branch's conv + BN of a kind-B block.
    pub fn pool_branch(&self) -> Option<&ConvBn<T>> {
        match &self.shortcut {
            Shortcut::PoolProject(b) => Some(b),
            _ => None,
        }
    }

    pub fn pool_branch_mut(&mut self) -> Option<&mut ConvBn<T>> {
        match &mut self.shortcut {
            Shortcut::PoolProject(b) => Some(b),
            _ => None,
        }
    }

    /// Converts a kind-B block into a kind-C block with the same main branch.
    pub fn without_pool_branch(&self) -> Self {
        let mut out = self.clone();
        if out.config.kind == BlockKind::B {
            out.config.kind = BlockKind::C;
            out.shortcut = Shortcut::None;
        }
        out
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        expect_dim("block", "input channels", self.config.in_channels, s.c)?;
        if self.config.kind == BlockKind::B && (!s.h.is_multiple_of(2) || !s.w.is_multiple_of(2)) {
            return Err(Error::InvalidGeometry {
                op: "block_b",
                reason: format!("pooling branch needs even spatial extents, got {}x{}", s.h, s.w),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let h = match &self.expand {
            Some(e) => e.forward(x)?,
            None => x.clone(),
        };
        let h = self.depthwise.forward(&h)?;
        let main = self.project.forward(&h)?;
        match &self.shortcut {
            Shortcut::None => Ok(main),
            Shortcut::Identity => ops::add_residual(&main, x),
            Shortcut::PoolProject(b) => {
                let side = b.forward(&ops::avg_pool2d(x, (2, 2), (2, 2))?)?;
                assert_eq!(side.shape(), main.shape(), "block_b branch shapes must agree");
                ops::add_residual(&main, &side)
            }
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        self.check_input(x)?;
        let (h, expand) = match &mut self.expand {
            Some(e) => {
                let (h, c) = e.forward_train(x)?;
                (h, Some(c))
            }
            None => (x.clone(), None),
        };
        let (h, depthwise) = self.depthwise.forward_train(&h)?;
        let (main, project) = self.project.forward_train(&h)?;
        let (out, shortcut) = match &mut self.shortcut {
            Shortcut::None => (main, None),
            Shortcut::Identity => (ops::add_residual(&main, x)?, None),
            Shortcut::PoolProject(b) => {
                let pooled = ops::avg_pool2d(x, (2, 2), (2, 2))?;
                let (side, c) = b.forward_train(&pooled)?;
                assert_eq!(side.shape(), main.shape(), "block_b branch shapes must agree");
                (ops::add_residual(&main, &side)?, Some(c))
            }
        };
        Ok((
            out,
            BlockCache {
                expand,
                depthwise,
                project,
                shortcut,
                input_shape: x.shape(),
            },
        ))
    }

    pub fn backward(&mut self, cache: &BlockCache<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.project.backward(&cache.project, grad)?;
        let g = self.depthwise.backward(&cache.depthwise, &g)?;
        let mut dx = match (&mut self.expand, &cache.expand) {
            (Some(e), Some(c)) => e.backward(c, &g)?,
            _ => g,
        };
        match &mut self.shortcut {
            Shortcut::None => {}
            Shortcut::Identity => {
                for (d, &v) in dx.data_mut().iter_mut().zip(grad.data()) {
                    *d += v;
                }
            }
            Shortcut::PoolProject(b) => {
                let c = cache.shortcut.as_ref().expect("shortcut cache");
                let gp = b.backward(c, grad)?;
                let gx = ops::avg_pool2d_backward(cache.input_shape, (2, 2), (2, 2), &gp)?;
                for (d, &v) in dx.data_mut().iter_mut().zip(gx.data()) {
                    *d += v;
                }
            }
        }
        Ok(dx)
    }

    pub fn costs(&self, prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerCost>) -> Result<(usize, usize, usize)> {
        let mut shape = input;
        if let Some(e) = &self.expand {
            shape = e.costs(&join(prefix, "expand"), shape, out)?;
        }
        shape = self.depthwise.costs(&join(prefix, "depthwise"), shape, out)?;
        shape = self.project.costs(&join(prefix, "project"), shape, out)?;
        if let Shortcut::PoolProject(b) = &self.shortcut {
            let pooled = (input.0, input.1 / 2, input.2 / 2);
            out.push(LayerCost {
                name: join(prefix, "shortcut.pool"),
                kind: "avgpool",
                params: 0,
                madds: 0,
                output: pooled,
            });
            let side = b.costs(&join(prefix, "shortcut"), pooled, out)?;
            if side != shape {
                return Err(Error::invalid(format!("block_b branch shapes disagree: {side:?} vs {shape:?}")));
            }
        }
        Ok(shape)
    }
}

impl<T: Scalar> Parameterized<T> for InvertedResidual<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        if let Some(e) = &self.expand {
            e.visit(&join(prefix, "expand"), f);
        }
        self.depthwise.visit(&join(prefix, "depthwise"), f);
        self.project.visit(&join(prefix, "project"), f);
        if let Shortcut::PoolProject(b) = &self.shortcut {
            b.visit(&join(prefix, "shortcut"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        if let Some(e) = &mut self.expand {
            e.visit_mut(&join(prefix, "expand"), f);
        }
        self.depthwise.visit_mut(&join(prefix, "depthwise"), f);
        self.project.visit_mut(&join(prefix, "project"), f);
        if let Shortcut::PoolProject(b) = &mut self.shortcut {
            b.visit_mut(&join(prefix, "shortcut"), f);
        }
    }
}

/// Squeeze-and-excitation: global average pool → linear C→C/r → ReLU6 →
/// linear C/r→C → sigmoid, then per-channel rescaling of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct SeModule<T> {
    pub squeeze: Linear<T>,
    pub excite: Linear<T>,
    reduce: usize,
}

#[derive(Debug, Clone)]
pub struct SeCache<T> {
    input: Tensor<T>,
    pooled: Tensor<T>,
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
    gates: Tensor<T>,
}

pub const SE_REDUCE: usize = 8;

impl<T: Scalar> SeModule<T> {
    pub fn new(channels: usize, reduce: usize) -> Result<Self> {
        if reduce == 0 || !channels.is_multiple_of(reduce) || channels < reduce {
            return Err(Error::invalid(format!("se_module: channels {channels} not divisible by reduce {reduce}")));
        }
        let hidden = channels / reduce;
        Ok(SeModule {
            squeeze: Linear::new(channels, hidden),
            excite: Linear::new(hidden, channels),
            reduce,
        })
    }

    pub fn channels(&self) -> usize {
        self.squeeze.inputs()
    }

    pub fn bottleneck(&self) -> usize {
        self.squeeze.outputs()
    }

    pub fn reduce(&self) -> usize {
        self.reduce
    }

    /// Per-sample, per-channel gates in `(0, 1)`, shaped `N × C × 1 × 1`.
    pub fn gates(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        expect_dim("se_module", "channels", self.channels(), x.shape().c)?;
        let pooled = ops::global_avg_pool(x);
        let h = ops::relu6(&self.squeeze.forward(&pooled)?);
        let g = ops::sigmoid(&self.excite.forward(&h)?);
        g.reshape(Shape::new(x.shape().n, x.shape().c, 1, 1))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let gates = self.gates(x)?;
        Ok(scale_channels(x, &gates))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, SeCache<T>)> {
        expect_dim("se_module", "channels", self.channels(), x.shape().c)?;
        let pooled = ops::global_avg_pool(x);
        let hidden_pre = self.squeeze.forward(&pooled)?;
        let hidden = ops::relu6(&hidden_pre);
        let gates = ops::sigmoid(&self.excite.forward(&hidden)?);
        let out = scale_channels(x, &gates);
        Ok((
            out,
            SeCache {
                input: x.clone(),
                pooled,
                hidden_pre,
                hidden,
                gates,
            },
        ))
    }

    pub fn backward(&mut self, cache: &SeCache<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let s = cache.input.shape();
        let plane = s.plane();
        let mut dx = Tensor::zeros(s);
        let mut dgate = Tensor::zeros(Shape::matrix(s.n, s.c));
        for i in 0..s.n * s.c {
            let g = &grad.data()[i * plane..(i + 1) * plane];
            let x = &cache.input.data()[i * plane..(i + 1) * plane];
            let gate = cache.gates.data()[i];
            dgate.data_mut()[i] = crate::gemm::dot(g, x);
            for (d, &gv) in dx.data_mut()[i * plane..(i + 1) * plane].iter_mut().zip(g) {
                *d = gv * gate;
            }
        }
        let d = ops::sigmoid_backward(&cache.gates, &dgate);
        let d = self.excite.backward(&cache.hidden, &d)?;
        let d = ops::relu6_backward(&cache.hidden_pre, &d);
        let d = self.squeeze.backward(&cache.pooled, &d)?;
        let d = ops::global_avg_pool_backward(s, &d.reshape(Shape::new(s.n, s.c, 1, 1))?);
        for (a, &b) in dx.data_mut().iter_mut().zip(d.data()) {
            *a += b;
        }
        Ok(dx)
    }

    pub fn costs(&self, prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerCost>) -> Result<(usize, usize, usize)> {
        expect_dim("se_module", "channels", self.channels(), input.0)?;
        out.push(self.squeeze.cost(join(prefix, "squeeze")));
        out.push(self.excite.cost(join(prefix, "excite")));
        Ok(input)
    }
}

fn scale_channels<T: Scalar>(x: &Tensor<T>, gates: &Tensor<T>) -> Tensor<T> {
    let plane = x.shape().plane();
    let mut out = x.clone();
    for (chunk, &g) in out.data_mut().chunks_mut(plane.max(1)).zip(gates.data()) {
        chunk.iter_mut().for_each(|v| *v *= g);
    }
    out
}

impl<T: Scalar> Parameterized<T> for SeModule<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.squeeze.visit(&join(prefix, "squeeze"), f);
        self.excite.visit(&join(prefix, "excite"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        self.squeeze.visit_mut(&join(prefix, "squeeze"), f);
        self.excite.visit_mut(&join(prefix, "excite"), f);
    }
}

/// Index of unit `(y, x)` of channel `m` in the flattened feature vector of
/// an `h_out × w_out × channels` map: `m·H′·W′ + y·W′ + x`.
pub fn stream_index(y: usize, x: usize, m: usize, h_out: usize, w_out: usize, channels: usize) -> Result<usize> {
    if y >= h_out || x >= w_out || m >= channels {
        return Err(Error::OutOfRange(format!("(y={y}, x={x}, m={m}) outside {h_out}x{w_out}x{channels}")));
    }
    Ok(m * h_out * w_out + y * w_out + x)
}

/// Geometry of a streaming module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamingConfig {
    /// (C, H, W) of the incoming feature map.
    pub input: (usize, usize, usize),
    pub kernel: (usize, usize),
    /// (vertical, horizontal)
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    /// (C, H′, W′) of the depthwise output.
    pub output: (usize, usize, usize),
}

impl StreamingConfig {
    pub fn new(input: (usize, usize, usize), kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let geom = ConvGeometry::new(kernel, stride, padding).with_groups(input.0);
        let (h, w) = geom.output_hw(input.1, input.2)?;
        Ok(StreamingConfig {
            input,
            kernel: geom.kernel,
            stride: geom.stride,
            padding: geom.padding,
            output: (input.0, h, w),
        })
    }

    /// The 3×3, stride 2, padding 1 module closing FeatherNets.
    pub fn feathernet(input: (usize, usize, usize)) -> Result<Self> {
        Self::new(input, 3, 2, 1)
    }

    /// Feature-vector length `H′·W′·C`.
    pub fn vector_len(&self) -> usize {
        self.output.0 * self.output.1 * self.output.2
    }

    pub fn index(&self, y: usize, x: usize, m: usize) -> Result<usize> {
        stream_index(y, x, m, self.output.1, self.output.2, self.output.0)
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            groups: self.input.0,
        }
    }
}

/// Strided depthwise convolution flattened straight into a feature vector,
/// with no fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingModule<T> {
    config: StreamingConfig,
    pub conv: Conv<T>,
}

impl<T: Scalar> StreamingModule<T> {
    pub fn new(config: StreamingConfig) -> Self {
        let conv = Conv::new(config.input.0, config.input.0, config.geometry(), false);
        StreamingModule { config, conv }
    }

    pub fn config(&self) -> &StreamingConfig {
        &self.config
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        let (c, h, w) = self.config.input;
        expect_dim("streaming_module", "channels", c, s.c)?;
        expect_dim("streaming_module", "height", h, s.h)?;
        expect_dim("streaming_module", "width", w, s.w)
    }

    /// `N × (H′·W′·C)` feature vectors.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        Ok(ops::flatten(self.conv.forward(x)?))
    }

    pub fn backward(&mut self, input: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = self.config.output;
        let g = grad.clone().reshape(Shape::new(input.shape().n, c, h, w))?;
        self.conv.backward(input, &g)
    }

    pub fn costs(&self, prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerCost>) -> Result<usize> {
        let mut c = self.conv.cost(join(prefix, "dwconv"), input)?;
        c.kind = "streaming";
        out.push(c);
        Ok(self.config.vector_len())
    }
}

impl<T: Scalar> Parameterized<T> for StreamingModule<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.conv.visit(&join(prefix, "dwconv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        self.conv.visit_mut(&join(prefix, "dwconv"), f);
    }
}
