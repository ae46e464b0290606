//! Assembled FeatherNet models: forward/backward, cost accounting.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::arch::{ArchSpec, HeadKind, Operator, Variant};
use crate::blocks::{BlockCache, BlockConfig, InvertedResidual, SeCache, SeModule, StreamingConfig, StreamingModule};
use crate::error::{Error, Result};
use crate::layers::{join, Conv, ConvBn, ConvBnCache, LayerCost, Linear, Parameterized, Visitor, VisitorMut};
use crate::ops::{self, ConvGeometry};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Unit<T> {
    Block(InvertedResidual<T>),
    Se(SeModule<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head<T> {
    Linear2(Linear<T>),
    Embedding,
    GapLinear2(Linear<T>),
}

/// A FeatherNet with materialised weights and batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    arch: ArchSpec,
    pub stem: ConvBn<T>,
    units: Vec<(String, Unit<T>)>,
    pub streaming: StreamingModule<T>,
    pub head: Head<T>,
}

enum UnitCache<T> {
    Block(BlockCache<T>),
    Se(SeCache<T>),
}

/// Activations saved by [`Model::forward_train`].
pub struct ModelCache<T> {
    stem: ConvBnCache<T>,
    units: Vec<UnitCache<T>>,
    streaming_input: Tensor<T>,
    head_input: Tensor<T>,
}

/// Totals plus per-layer rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub params: u64,
    pub madds: u64,
}

/// Counting convention printed alongside every cost report.
pub const MADDS_CONVENTION: &str = "one multiply-accumulate = one unit; conv = outH*outW*outC*kh*kw*inC/groups; \
linear = D*K; batch norm, activations, pooling and SE channel scaling count zero";

impl<T: Scalar> Model<T> {
    /// Builds the layer list for `arch` with zero weights and identity batch
    /// norms. Use [`crate::train::he_initialize`] (or [`build_feathernet`]) for
    /// trainable weights.
    pub fn new(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        let mut stem = None;
        let mut units = Vec::new();
        let mut streaming = None;
        for (i, row) in arch.rows.iter().enumerate() {
            match row.operator {
                Operator::Stem => {
                    stem = Some(ConvBn::new(Conv::new(row.input_channels, row.channels, ConvGeometry::new(3, 2, 1), false), true));
                }
                Operator::Block(kind) => {
                    let t = row.expansion.unwrap_or(1);
                    for r in 0..row.repeat {
                        let cin = if r == 0 { row.input_channels } else { row.channels };
                        let block = InvertedResidual::new(BlockConfig::new(kind, cin, row.channels, t))?;
                        units.push((format!("stage{i}.block{r}"), Unit::Block(block)));
                    }
                    if kind != crate::blocks::BlockKind::A {
                        units.push((format!("stage{i}.se"), Unit::Se(SeModule::new(row.channels, arch.se_reduce)?)));
                    }
                }
                Operator::Streaming => {
                    let cfg = StreamingConfig::feathernet((row.input_channels, row.input_size, row.input_size))?;
                    streaming = Some(StreamingModule::new(cfg));
                }
            }
        }
        let stem = stem.ok_or_else(|| Error::invalid("architecture has no stem"))?;
        let streaming: StreamingModule<T> = streaming.ok_or_else(|| Error::invalid("architecture has no streaming stage"))?;
        let head = match arch.head {
            HeadKind::Linear2 => Head::Linear2(Linear::new(streaming.config().vector_len(), 2)),
            HeadKind::None => Head::Embedding,
            HeadKind::GapLinear2 => Head::GapLinear2(Linear::new(streaming.config().output.0, 2)),
        };
        Ok(Model {
            arch,
            stem,
            units,
            streaming,
            head,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant
    }

    pub fn head_kind(&self) -> HeadKind {
        self.arch.head
    }

    pub fn units(&self) -> &[(String, Unit<T>)] {
        &self.units
    }

    pub fn units_mut(&mut self) -> &mut [(String, Unit<T>)] {
        &mut self.units
    }

    pub fn expected_input(&self, batch: usize) -> Shape {
        Shape::new(batch, self.arch.input_channels, self.arch.input_size, self.arch.input_size)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        let want = self.expected_input(s.n);
        if s != want || s.n == 0 {
            return Err(Error::invalid(format!("model input: expected Nx{}x{}x{}, got {s}", want.c, want.h, want.w)));
        }
        Ok(())
    }

    /// Streaming-module feature vectors, `N × 1024`.
    pub fn embed(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x)?;
        for (_, u) in &self.units {
            h = match u {
                Unit::Block(b) => b.forward(&h)?,
                Unit::Se(s) => s.forward(&h)?,
            };
        }
        self.streaming.forward(&h)
    }

    /// Inference with running batch-norm statistics. Returns `N × 2` logits,
    /// or the `N × 1024` embedding when the head is [`HeadKind::None`].
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let fv = self.embed(x)?;
        match &self.head {
            Head::Linear2(l) => l.forward(&fv),
            Head::Embedding => Ok(fv),
            Head::GapLinear2(l) => l.forward(&self.gap_of(&fv)?),
        }
    }

    fn gap_of(&self, fv: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = self.streaming.config().output;
        Ok(ops::global_avg_pool(&fv.clone().reshape(Shape::new(fv.shape().n, c, h, w))?))
    }

    /// Training-mode forward: batch statistics, running-stat updates, and a
    /// cache for [`Model::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ModelCache<T>)> {
        self.check_input(x)?;
        let (mut h, stem) = self.stem.forward_train(x)?;
        let mut caches = Vec::with_capacity(self.units.len());
        for (_, u) in &mut self.units {
            let (next, c) = match u {
                Unit::Block(b) => {
                    let (y, c) = b.forward_train(&h)?;
                    (y, UnitCache::Block(c))
                }
                Unit::Se(s) => {
                    let (y, c) = s.forward_train(&h)?;
                    (y, UnitCache::Se(c))
                }
            };
            caches.push(c);
            h = next;
        }
        let fv = self.streaming.forward(&h)?;
        let (out, head_input) = match &self.head {
            Head::Linear2(l) => (l.forward(&fv)?, fv),
            Head::Embedding => (fv.clone(), fv),
            Head::GapLinear2(l) => {
                let g = self.gap_of(&fv)?;
                (l.forward(&g)?, g)
            }
        };
        Ok((
            out,
            ModelCache {
                stem,
                units: caches,
                streaming_input: h,
                head_input,
            },
        ))
    }

    /// Accumulates parameter gradients for an output gradient.
    pub fn backward(&mut self, cache: &ModelCache<T>, grad: &Tensor<T>) -> Result<()> {
        let g_fv = match &mut self.head {
            Head::Linear2(l) => l.backward(&cache.head_input, grad)?,
            Head::Embedding => grad.clone(),
            Head::GapLinear2(l) => {
                let g = l.backward(&cache.head_input, grad)?;
                let (c, h, w) = self.streaming.config().output;
                let n = grad.shape().n;
                let g = ops::global_avg_pool_backward(Shape::new(n, c, h, w), &g.reshape(Shape::new(n, c, 1, 1))?);
                ops::flatten(g)
            }
        };
        let mut g = self.streaming.backward(&cache.streaming_input, &g_fv)?;
        for ((_, u), c) in self.units.iter_mut().zip(&cache.units).rev() {
            g = match (u, c) {
                (Unit::Block(b), UnitCache::Block(c)) => b.backward(c, &g)?,
                (Unit::Se(s), UnitCache::Se(c)) => s.backward(c, &g)?,
                _ => return Err(Error::invalid("model cache does not match layer list")),
            };
        }
        self.stem.backward(&cache.stem, &g)?;
        Ok(())
    }

    /// Per-layer parameter and multiply-add counts for a square input.
    pub fn cost_report(&self, input_size: usize) -> Result<CostReport> {
        if input_size != self.arch.input_size {
            return Err(Error::invalid(format!(
                "input size {input_size} unsupported: the architecture is fixed at {}",
                self.arch.input_size
            )));
        }
        let mut layers = Vec::new();
        let mut shape = self.stem.costs("stem", (self.arch.input_channels, input_size, input_size), &mut layers)?;
        for (name, u) in &self.units {
            shape = match u {
                Unit::Block(b) => b.costs(name, shape, &mut layers)?,
                Unit::Se(s) => s.costs(name, shape, &mut layers)?,
            };
        }
        let fv = self.streaming.costs("streaming", shape, &mut layers)?;
        match &self.head {
            Head::Linear2(l) => {
                if l.inputs() != fv {
                    return Err(Error::invalid(format!("head expects {} features, streaming yields {fv}", l.inputs())));
                }
                layers.push(l.cost(String::from("head.linear")));
            }
            Head::Embedding => {}
            Head::GapLinear2(l) => {
                let (c, _, _) = self.streaming.config().output;
                layers.push(LayerCost {
                    name: String::from("head.gap"),
                    kind: "gap",
                    params: 0,
                    madds: 0,
                    output: (c, 1, 1),
                });
                layers.push(l.cost(String::from("head.linear")));
            }
        }
        let params = layers.iter().map(|l| l.params).sum();
        let madds = layers.iter().map(|l| l.madds).sum();
        Ok(CostReport { layers, params, madds })
    }

    /// Learned scalars (weights, biases, BN scale and shift).
    pub fn count_params(&self) -> u64 {
        self.param_count() as u64
    }

    pub fn count_madds(&self, input_size: usize) -> Result<u64> {
        Ok(self.cost_report(input_size)?.madds)
    }
}

/// Builds and He-initialises FeatherNet `variant` with the given head.
pub fn build_feathernet<T: Scalar>(variant: Variant, head: HeadKind, seed: u64) -> Result<Model<T>> {
    let mut m = Model::new(ArchSpec::feathernet(variant, head))?;
    crate::train::he_initialize(&mut m, seed);
    Ok(m)
}

impl<T: Scalar> Parameterized<T> for Model<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (name, u) in &self.units {
            match u {
                Unit::Block(b) => b.visit(&join(prefix, name), f),
                Unit::Se(s) => s.visit(&join(prefix, name), f),
            }
        }
        self.streaming.visit(&join(prefix, "streaming"), f);
        match &self.head {
            Head::Linear2(l) | Head::GapLinear2(l) => l.visit(&join(prefix, "head.linear"), f),
            Head::Embedding => {}
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        for (name, u) in &mut self.units {
            match u {
                Unit::Block(b) => b.visit_mut(&join(prefix, name), f),
                Unit::Se(s) => s.visit_mut(&join(prefix, name), f),
            }
        }
        self.streaming.visit_mut(&join(prefix, "streaming"), f);
        match &mut self.head {
            Head::Linear2(l) | Head::GapLinear2(l) => l.visit_mut(&join(prefix, "head.linear"), f),
            Head::Embedding => {}
        }
    }
}
