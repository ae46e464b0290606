//! Central finite-difference gradient checking in `f64`.
//!
//! Each check projects the output onto a fixed random direction `r`, so the
//! scalar loss is `Σ r·y`. The analytic gradient comes from the backward pass
//! seeded with `r`; the numeric one from a five-point central stencil for
//! every input element and every learned parameter.
//!
//! Train-mode batch norm makes some gradients exactly zero (a per-channel
//! constant upstream is removed by the mean). Their numeric estimate is pure
//! rounding noise, so the relative error uses a denominator floor of
//! [`ABS_FLOOR`]: below it the comparison is effectively absolute at
//! `TOLERANCE * ABS_FLOOR`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockConfig, BlockKind, InvertedResidual, SeModule, StreamingConfig, StreamingModule};
use crate::error::Result;
use crate::layers::{BatchNorm, Conv, ConvBn, Parameterized, TensorKind, Visitor, VisitorMut};
use crate::ops::{self, ConvGeometry};
use crate::tensor::{Shape, Tensor};
use crate::train::{focal_loss, he_initialize};

pub const STEP: f64 = 2e-4;
pub const TOLERANCE: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const ABS_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub config: String,
    /// Number of gradient entries compared.
    pub checked: usize,
    pub max_rel_err: f64,
    /// Analytic and numeric values at the worst entry.
    pub worst_pair: (f64, f64),
    /// `input[i]` or `<tensor>[i]` of the worst entry.
    pub worst_entry: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuiteReport {
    pub results: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn worst(&self) -> f64 {
        self.results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.max_rel_err < TOLERANCE)
    }

    /// Names in first-seen order with their config counts.
    pub fn coverage(&self) -> Vec<(&'static str, usize)> {
        let mut out: Vec<(&'static str, usize)> = Vec::new();
        for r in &self.results {
            match out.iter_mut().find(|(n, _)| *n == r.name) {
                Some((_, c)) => *c += 1,
                None => out.push((r.name, 1)),
            }
        }
        out
    }
}

/// Modules without parameters.
struct Stateless;

impl Parameterized<f64> for Stateless {
    fn visit(&self, _: &str, _: &mut Visitor<'_, f64>) {}
    fn visit_mut(&mut self, _: &str, _: &mut VisitorMut<'_, f64>) {}
}

type Fwd<'a, M> = &'a dyn Fn(&mut M, &Tensor<f64>) -> Result<Tensor<f64>>;
type Bwd<'a, M> = &'a dyn Fn(&mut M, &Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>;

/// Five-point central difference `(−y(2h) + 8y(h) − 8y(−h) + y(−2h)) / 12h`,
/// differenced per output element before projecting onto `r` so unchanged
/// outputs cancel exactly.
fn stencil(r: &Tensor<f64>, mut output_at: impl FnMut(f64) -> Result<Tensor<f64>>) -> Result<f64> {
    let h = STEP;
    let (p2, p1, m1, m2) = (output_at(2.0 * h)?, output_at(h)?, output_at(-h)?, output_at(-2.0 * h)?);
    let mut acc = 0.0;
    for i in 0..r.len() {
        let d = 8.0 * (p1.data()[i] - m1.data()[i]) - (p2.data()[i] - m2.data()[i]);
        acc += r.data()[i] * d;
    }
    Ok(acc / (12.0 * h))
}

fn with_param<M: Parameterized<f64>>(m: &mut M, index: usize, elem: usize, f: impl FnOnce(&mut f64)) {
    let mut k = 0;
    let mut f = Some(f);
    m.visit_mut("", &mut |_, kind, t| {
        if kind.is_learned() {
            if k == index {
                if let Some(f) = f.take() {
                    f(&mut t.data_mut()[elem]);
                }
            }
            k += 1;
        }
    });
}

/// Compares analytic and numeric gradients of `Σ r·fwd(m, x)` with respect
/// to `x` and every learned tensor of `m`.
pub fn check_module<M: Parameterized<f64>>(
    name: &'static str,
    config: String,
    m: &mut M,
    x: &Tensor<f64>,
    rng: &mut ChaCha8Rng,
    fwd: Fwd<'_, M>,
    bwd: Bwd<'_, M>,
) -> Result<CheckResult> {
    let y = fwd(m, x)?;
    let r = Tensor::from_fn(y.shape(), |_| rng.random_range(-1.0..1.0));
    m.zero_grad();
    let dx = bwd(m, x, &r)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    m.visit("", &mut |name, kind, t| {
        if kind.is_learned() {
            analytic.push((String::from(name), t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()])));
        }
    });

    let mut worst: f64 = 0.0;
    let mut worst_pair = (0.0, 0.0);
    let mut worst_entry = String::new();
    let mut checked = 0;
    let mut record = |a: f64, n: f64, entry: &dyn Fn() -> String| {
        let e = relative_error(a, n);
        if e > worst || worst_entry.is_empty() {
            worst = e;
            worst_pair = (a, n);
            worst_entry = entry();
        }
    };
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        let numeric = stencil(&r, |d| {
            xp.data_mut()[i] = orig + d;
            let y = fwd(m, &xp)?;
            xp.data_mut()[i] = orig;
            Ok(y)
        })?;
        record(dx.data()[i], numeric, &|| format!("input[{i}]"));
        checked += 1;
    }
    for (k, (name, grads)) in analytic.iter().enumerate() {
        for (e, &g) in grads.iter().enumerate() {
            let mut orig = 0.0;
            with_param(m, k, e, |v| orig = *v);
            let numeric = stencil(&r, |d| {
                with_param(m, k, e, |v| *v = orig + d);
                let y = fwd(m, x)?;
                with_param(m, k, e, |v| *v = orig);
                Ok(y)
            })?;
            record(g, numeric, &|| format!("{name}[{e}]"));
            checked += 1;
        }
    }
    Ok(CheckResult {
        name,
        config,
        checked,
        max_rel_err: worst,
        worst_pair,
        worst_entry,
    })
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// He weights, then random batch-norm affine terms and biases so that no
/// gradient path is trivially the identity.
fn randomize<M: Parameterized<f64>>(m: &mut M, rng: &mut ChaCha8Rng) {
    he_initialize(m, rng.random());
    m.visit_mut("", &mut |_, kind, t| {
        let range = match kind {
            TensorKind::BnScale => 0.5..1.5,
            TensorKind::BnShift | TensorKind::Bias => -0.5..0.5,
            _ => return,
        };
        for v in t.data_mut() {
            *v = rng.random_range(range.clone());
        }
    });
}

/// Largest `|x̂|` batch norm can produce over `count` values is
/// `sqrt(count - 1)`; block checks stay below 37 values per channel.
const MAX_NORMALISED: f64 = 6.0;

/// Sets each channel of a batch norm feeding ReLU6 to sit either well
/// inside `(0, 6)` or well below zero, so no finite difference step can
/// cross a kink while both the pass-through and the clipped gradient paths
/// stay covered. Saturating at 6 instead would add large constant offsets
/// that the next batch norm cancels with rounding noise.
fn clear_of_kinks(cb: &mut ConvBn<f64>, rng: &mut ChaCha8Rng) {
    if !cb.relu6 {
        return;
    }
    let (scale, shift) = (&mut cb.bn.scale, &mut cb.bn.shift);
    for (g, b) in scale.data_mut().iter_mut().zip(shift.data_mut()) {
        *g = rng.random_range(0.2..0.4);
        *b = if rng.random_bool(0.3) { -3.0 } else { rng.random_range(2.8..3.2) };
        let (lo, hi) = (*b - *g * MAX_NORMALISED, *b + *g * MAX_NORMALISED);
        debug_assert!(hi < 0.0 || (lo > 0.0 && hi < 6.0));
    }
}

/// Same idea for the SE bottleneck: its input is bounded by 1 in magnitude,
/// so rows of the squeeze weight are rescaled to L1 norm 2 and the bias
/// picks the region.
fn se_clear_of_kinks(se: &mut SeModule<f64>, rng: &mut ChaCha8Rng) {
    let (d, k) = (se.squeeze.inputs(), se.squeeze.outputs());
    for j in 0..k {
        let w = se.squeeze.weight.data_mut();
        let l1: f64 = (0..d).map(|i| w[i * k + j].abs()).sum();
        if l1 > 0.0 {
            for i in 0..d {
                w[i * k + j] *= 2.0 / l1;
            }
        }
        se.squeeze.bias.data_mut()[j] = if rng.random_bool(0.3) { -3.0 } else { 3.0 };
    }
}

/// Keeps values at least `margin` away from the ReLU6 kinks at 0 and 6.
fn off_kinks(x: &mut Tensor<f64>, margin: f64) {
    for v in x.data_mut() {
        for k in [0.0, 6.0] {
            if (*v - k).abs() < margin {
                *v = k + margin.copysign(*v - k);
            }
        }
    }
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Runs every primitive and block check with `configs` random tiny
/// configurations each.
pub fn run_suite(seed: u64, configs: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::default();
    let rng = &mut rng;
    for _ in 0..configs {
        report.results.push(conv_case(rng, false)?);
        report.results.push(conv_case(rng, true)?);
        report.results.push(depthwise_case(rng)?);
        report.results.push(linear_case(rng)?);
        report.results.push(batch_norm_case(rng)?);
        report.results.push(relu6_case(rng)?);
        report.results.push(sigmoid_case(rng)?);
        report.results.push(avg_pool_case(rng)?);
        report.results.push(global_pool_case(rng)?);
        report.results.push(residual_case(rng)?);
        report.results.push(focal_case(rng)?);
        for kind in [BlockKind::A, BlockKind::B, BlockKind::C] {
            report.results.push(block_case(rng, kind)?);
        }
        report.results.push(se_case(rng)?);
        report.results.push(streaming_case(rng)?);
    }
    Ok(report)
}

pub fn conv_case(rng: &mut ChaCha8Rng, grouped: bool) -> Result<CheckResult> {
    let groups = if grouped { dims(rng, 2, 3) } else { 1 };
    let cin = groups * dims(rng, 1, 2);
    let cout = groups * dims(rng, 1, 2);
    let k = dims(rng, 1, 3);
    let stride = dims(rng, 1, 2);
    let pad = dims(rng, 0, 1);
    let h = dims(rng, k.max(2), 5);
    let w = dims(rng, k.max(2), 5);
    let n = dims(rng, 1, 2);
    let geom = ConvGeometry::new(k, stride, pad).with_groups(groups);
    let mut conv = Conv::new(cin, cout, geom, true);
    randomize(&mut conv, rng);
    let x = random_tensor(rng, Shape::new(n, cin, h, w), -1.0, 1.0);
    let name = if grouped { "conv2d_grouped" } else { "conv2d" };
    let config = format!("{n}x{cin}x{h}x{w} -> {cout} k{k} s{stride} p{pad} g{groups}");
    check_module(name, config, &mut conv, &x, rng, &|m, x| m.forward(x), &|m, x, g| m.backward(x, g))
}

pub fn depthwise_case(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let c = dims(rng, 1, 4);
    let k = [1, 3][dims(rng, 0, 1)];
    let stride = dims(rng, 1, 2);
    let pad = dims(rng, 0, 1);
    let h = dims(rng, k.max(2), 5);
    let w = dims(rng, k.max(2), 5);
    let n = dims(rng, 1, 2);
    let mut conv = Conv::depthwise(c, k, stride, pad);
    randomize(&mut conv, rng);
    let x = random_tensor(rng, Shape::new(n, c, h, w), -1.0, 1.0);
    let config = format!("{n}x{c}x{h}x{w} k{k} s{stride} p{pad}");
    check_module("depthwise_conv2d", config, &mut conv, &x, rng, &|m, x| m.forward(x), &|m, x, g| m.backward(x, g))
}

pub fn linear_case(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let n = dims(rng, 1, 3);
    let d = dims(rng, 1, 6);
    let k = dims(rng, 1, 4);
    let mut lin = crate::layers::Linear::new(d, k);
    randomize(&mut lin, rng);
    let x = random_tensor(rng, Shape::matrix(n, d), -1.0, 1.0);
    check_module("linear", format!("{n}x{d} -> {k}"), &mut lin, &x, rng, &|m, x| m.forward(x), &|m, x, g| m.backward(x, g))
}

pub fn batch_norm_case(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let n = dims(rng, 2, 3);
    let c = dims(rng, 1, 3);
    let h = dims(rng, 1, 3);
    let w = dims(rng, 1, 3);
    let mut bn = BatchNorm::new(c);
    randomize(&mut bn, rng);
    let x = random_tensor(rng, Shape::new(n, c, h, w), -2.0, 2.0);
    check_module(
        "batch_norm",
        format!("{n}x{c}x{h}x{w}"),
        &mut bn,
        &x,
        rng,
        &|m, x| Ok(m.forward_train(x)?.0),
        &|m, x, g| {
            let (_, cache) = m.forward_train(x)?;
            Ok(m.backward(&cache, g))
        },
    )
}

fn small_shape(rng: &mut ChaCha8Rng) -> Shape {
    Shape::new(dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 4))
}

pub fn relu6_case(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let s = small_shape(rng);
    let mut x = random_tensor(rng, s, -2.0, 8.0);
    off_kinks(&mut x, 10.0 * STEP);
    check_module("relu6", format!("{s}"), &mut Stateless, &x, rng, &|_, x| Ok(ops::relu6(x)), &|_, x, g| {
        Ok(ops::relu6_backward(x, g))
    })
}

pub fn sigmoid_case(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let s = small_shape(rng);
    let x = random_tensor(rng, s, -4.0, 4.0);
    check_module("sigmoid", format!("{s}"), &mut Stateless, &x, rng, &|_, x| Ok(ops::sigmoid(x)), &|_, x, g| {
        Ok(ops::sigmoid_backward(&ops::sigmoid(x), g))
    })
}

pub fn avg_pool_case(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let k = dims(rng, 1, 2);
    let s = dims(rng, 1, 2);
    let shape = Shape::new(dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 2, 5), dims(rng, 2, 5));
    let x = random_tensor(rng, shape, -1.0, 1.0);
    check_module(
        "avg_pool2d",
        format!("{shape} k{k} s{s}"),
        &mut Stateless,
        &x,
        rng,
        &|_, x| ops::avg_pool2d(x, (k, k), (s, s)),
        &|_, x, g| ops::avg_pool2d_backward(x.shape(), (k, k), (s, s), g),
    )
}

pub fn global_pool_case(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let s = small_shape(rng);
    let x = random_tensor(rng, s, -1.0, 1.0);
    check_module("global_avg_pool", format!("{s}"), &mut Stateless, &x, rng, &|_, x| Ok(ops::global_avg_pool(x)), &|_, x, g| {
        Ok(ops::global_avg_pool_backward(x.shape(), g))
    })
}

pub fn residual_case(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let s = small_shape(rng);
    let x = random_tensor(rng, s, -1.0, 1.0);
    let other = random_tensor(rng, s, -1.0, 1.0);
    // y = flatten(x + other); the gradient reaches x unchanged
    check_module(
        "add_residual+flatten",
        format!("{s}"),
        &mut Stateless,
        &x,
        rng,
        &|_, x| Ok(ops::flatten(ops::add_residual(x, &other)?)),
        &|_, x, g| g.clone().reshape(x.shape()),
    )
}

pub fn focal_case(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let n = dims(rng, 1, 4);
    let gamma = [0.0, 1.0, 2.0, 3.0][dims(rng, 0, 3)];
    let alpha = rng.random_range(0.25..1.0);
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
    let x = random_tensor(rng, Shape::matrix(n, 2), -3.0, 3.0);
    check_module(
        "focal_loss",
        format!("n{n} alpha{alpha:.3} gamma{gamma}"),
        &mut Stateless,
        &x,
        rng,
        &|_, x| Ok(Tensor::vector(vec![focal_loss(x, &labels, alpha, gamma)?.0])),
        &|_, x, g| Ok(focal_loss(x, &labels, alpha, gamma)?.1.map(|v| v * g.data()[0])),
    )
}

pub fn block_case(rng: &mut ChaCha8Rng, kind: BlockKind) -> Result<CheckResult> {
    let cin = dims(rng, 1, 3);
    let cout = match kind {
        // half the A configs keep the identity skip
        BlockKind::A if rng.random_bool(0.5) => cin,
        _ => dims(rng, 1, 3),
    };
    let t = dims(rng, 1, 3);
    let config = BlockConfig::new(kind, cin, cout, t);
    // at least two output positions per sample, so every batch norm sees
    // four or more values and is not a near step function
    let (h, w) = loop {
        let hw = match kind {
            BlockKind::B => (2 * dims(rng, 1, 2), 2 * dims(rng, 1, 2)),
            _ => (dims(rng, 2, 4), dims(rng, 2, 4)),
        };
        let outputs = if kind == BlockKind::A { hw.0 * hw.1 } else { hw.0.div_ceil(2) * hw.1.div_ceil(2) };
        if outputs >= 2 {
            break hw;
        }
    };
    let n = 2;
    let mut block = InvertedResidual::new(config)?;
    randomize(&mut block, rng);
    if let Some(e) = block.expand.as_mut() {
        clear_of_kinks(e, rng);
    }
    clear_of_kinks(&mut block.depthwise, rng);
    let x = random_tensor(rng, Shape::new(n, cin, h, w), -1.0, 1.0);
    let name = match kind {
        BlockKind::A => "block_a",
        BlockKind::B => "block_b",
        BlockKind::C => "block_c",
    };
    check_module(
        name,
        format!("{n}x{cin}x{h}x{w} -> {cout} t{t}"),
        &mut block,
        &x,
        rng,
        &|m, x| Ok(m.forward_train(x)?.0),
        &|m, x, g| {
            let (_, cache) = m.forward_train(x)?;
            m.backward(&cache, g)
        },
    )
}

pub fn se_case(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let reduce = [2, 4, 8][dims(rng, 0, 2)];
    let c = reduce * dims(rng, 1, 2);
    let n = dims(rng, 1, 2);
    let h = dims(rng, 1, 3);
    let w = dims(rng, 1, 3);
    let mut se = SeModule::new(c, reduce)?;
    randomize(&mut se, rng);
    se_clear_of_kinks(&mut se, rng);
    let x = random_tensor(rng, Shape::new(n, c, h, w), -1.0, 1.0);
    check_module(
        "se",
        format!("{n}x{c}x{h}x{w} r{reduce}"),
        &mut se,
        &x,
        rng,
        &|m, x| Ok(m.forward_train(x)?.0),
        &|m, x, g| {
            let (_, cache) = m.forward_train(x)?;
            m.backward(&cache, g)
        },
    )
}

pub fn streaming_case(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let c = dims(rng, 1, 4);
    let h = dims(rng, 2, 5);
    let w = dims(rng, 2, 5);
    let n = dims(rng, 1, 2);
    let mut sm = StreamingModule::new(StreamingConfig::new((c, h, w), 3, 2, 1)?);
    randomize(&mut sm, rng);
    let x = random_tensor(rng, Shape::new(n, c, h, w), -1.0, 1.0);
    check_module(
        "streaming",
        format!("{n}x{c}x{h}x{w}"),
        &mut sm,
        &x,
        rng,
        &|m, x| m.forward(x),
        &|m, x, g| m.backward(x, g),
    )
}
