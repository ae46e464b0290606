//! 2-D convolution: a patch-gathering (im2col + GEMM) fast path, a direct
//! depthwise kernel, and the naive nested-loop reference both are tested
//! against.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gemm;
use crate::scalar::Scalar;
use crate::tensor::{expect_dim, Shape, Tensor};

/// Kernel, stride, padding and group count of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    /// (vertical, horizontal)
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvGeometry {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            groups: 1,
        }
    }

    pub const fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub const fn pointwise() -> Self {
        Self::new(1, 1, 0)
    }

    /// Output `(height, width)` for an input of `(h, w)`.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            output_extent(h, self.kernel.0, self.stride.0, self.padding.0)?,
            output_extent(w, self.kernel.1, self.stride.1, self.padding.1)?,
        ))
    }
}

/// `floor((input + 2·pad − kernel) / stride) + 1`, rejected when it would be
/// smaller than one.
pub fn output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::InvalidGeometry {
            op: "conv",
            reason: format!("kernel {kernel} and stride {stride} must be positive"),
        });
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::InvalidGeometry {
            op: "conv",
            reason: format!("padded extent {padded} smaller than kernel {kernel}"),
        });
    }
    Ok((padded - kernel) / stride + 1)
}

fn validate(input: Shape, weight: Shape, geom: &ConvGeometry, op: &'static str) -> Result<Shape> {
    let g = geom.groups;
    if g == 0 || !input.c.is_multiple_of(g) {
        return Err(Error::InvalidGeometry {
            op,
            reason: format!("groups {g} must divide input channels {}", input.c),
        });
    }
    if !weight.n.is_multiple_of(g) {
        return Err(Error::InvalidGeometry {
            op,
            reason: format!("groups {g} must divide output channels {}", weight.n),
        });
    }
    expect_dim(op, "weight in-channels", input.c / g, weight.c)?;
    expect_dim(op, "weight kernel height", geom.kernel.0, weight.h)?;
    expect_dim(op, "weight kernel width", geom.kernel.1, weight.w)?;
    let (oh, ow) = geom.output_hw(input.h, input.w)?;
    Ok(Shape::new(input.n, weight.n, oh, ow))
}

/// Gathers the receptive fields of channels `c0..c0+cin` of one sample into a
/// `(cin·kh·kw) × (oh·ow)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(src: &[T], h: usize, w: usize, c0: usize, cin: usize, geom: &ConvGeometry, oh: usize, ow: usize, cols: &mut [T]) {
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let p = oh * ow;
    for ci in 0..cin {
        let plane = &src[(c0 + ci) * h * w..(c0 + ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ci * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    let out = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let irow = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out.iter_mut().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { irow[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back into channels `c0..c0+cin` of `dst`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, c0: usize, cin: usize, geom: &ConvGeometry, oh: usize, ow: usize, dst: &mut [T]) {
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let p = oh * ow;
    for ci in 0..cin {
        let plane = &mut dst[(c0 + ci) * h * w..(c0 + ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((ci * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let irow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix >= 0 && (ix as usize) < w {
                            irow[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_unit_pointwise(geom: &ConvGeometry) -> bool {
    geom.kernel == (1, 1) && geom.stride == (1, 1) && geom.padding == (0, 0)
}

/// Grouped 2-D convolution. `weight` is `outC × inC/groups × kh × kw`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    let is = input.shape();
    let ws = weight.shape();
    let os = validate(is, ws, geom, "conv2d")?;
    if let Some(b) = bias {
        expect_dim("conv2d", "bias length", ws.n, b.len())?;
    }
    input.ensure_finite("conv2d")?;

    let g = geom.groups;
    let cin_g = is.c / g;
    let cout_g = ws.n / g;
    let p = os.h * os.w;
    let kk = cin_g * geom.kernel.0 * geom.kernel.1;
    let direct = is_unit_pointwise(geom);
    let mut cols = if direct { Vec::new() } else { vec![T::zero(); kk * p] };
    let mut out = Tensor::zeros(os);
    let wdata = weight.data();
    for n in 0..is.n {
        let src = input.sample(n);
        let dst = &mut out.data_mut()[n * os.sample_len()..(n + 1) * os.sample_len()];
        for gi in 0..g {
            let b: &[T] = if direct {
                &src[gi * cin_g * p..(gi + 1) * cin_g * p]
            } else {
                im2col(src, is.h, is.w, gi * cin_g, cin_g, geom, os.h, os.w, &mut cols);
                &cols
            };
            let wg = &wdata[gi * cout_g * kk..(gi + 1) * cout_g * kk];
            let cg = &mut dst[gi * cout_g * p..(gi + 1) * cout_g * p];
            gemm::gemm_nn(cout_g, p, kk, wg, b, cg);
        }
        if let Some(bias) = bias {
            for (oc, &bv) in bias.iter().enumerate() {
                dst[oc * p..(oc + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Gradients produced by a convolution backward pass.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Backward pass of [`conv2d`]. `bias` in the result is always the
/// per-output-channel sum of `grad_out`, used or not.
pub fn conv2d_backward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, geom: &ConvGeometry, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
    let is = input.shape();
    let ws = weight.shape();
    let os = validate(is, ws, geom, "conv2d_backward")?;
    if grad_out.shape() != os {
        return Err(Error::InvalidArgument(format!("conv2d_backward: gradient shape {} does not match output {os}", grad_out.shape())));
    }
    let g = geom.groups;
    let cin_g = is.c / g;
    let cout_g = ws.n / g;
    let p = os.h * os.w;
    let kk = cin_g * geom.kernel.0 * geom.kernel.1;
    let direct = is_unit_pointwise(geom);
    let mut cols = if direct { Vec::new() } else { vec![T::zero(); kk * p] };
    let mut dcols = vec![T::zero(); kk * p];
    let mut dx = Tensor::zeros(is);
    let mut dw = vec![T::zero(); ws.volume()];
    let mut db = vec![T::zero(); ws.n];
    let wdata = weight.data();
    for n in 0..is.n {
        let src = input.sample(n);
        let dy = grad_out.sample(n);
        for (oc, acc) in db.iter_mut().enumerate() {
            *acc += gemm::sum(&dy[oc * p..(oc + 1) * p]);
        }
        for gi in 0..g {
            let dyg = &dy[gi * cout_g * p..(gi + 1) * cout_g * p];
            let wg = &wdata[gi * cout_g * kk..(gi + 1) * cout_g * kk];
            let b: &[T] = if direct {
                &src[gi * cin_g * p..(gi + 1) * cin_g * p]
            } else {
                im2col(src, is.h, is.w, gi * cin_g, cin_g, geom, os.h, os.w, &mut cols);
                &cols
            };
            gemm::gemm_nt(cout_g, kk, p, dyg, b, &mut dw[gi * cout_g * kk..(gi + 1) * cout_g * kk]);

            let dxs = &mut dx.data_mut()[n * is.sample_len()..(n + 1) * is.sample_len()];
            if direct {
                gemm::gemm_tn(kk, p, cout_g, wg, dyg, &mut dxs[gi * cin_g * p..(gi + 1) * cin_g * p]);
            } else {
                dcols.iter_mut().for_each(|v| *v = T::zero());
                gemm::gemm_tn(kk, p, cout_g, wg, dyg, &mut dcols);
                col2im(&dcols, is.h, is.w, gi * cin_g, cin_g, geom, os.h, os.w, dxs);
            }
        }
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

/// Reference convolution: one multiply-add per innermost iteration, no
/// gathering and no reordering. Kept as the oracle for [`conv2d`] and
/// [`depthwise_conv2d`].
pub fn conv2d_naive<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    let is = input.shape();
    let ws = weight.shape();
    let os = validate(is, ws, geom, "conv2d_naive")?;
    let cin_g = is.c / geom.groups;
    let cout_g = ws.n / geom.groups;
    let mut out = Tensor::zeros(os);
    for n in 0..os.n {
        for oc in 0..os.c {
            let gi = oc / cout_g;
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = bias.map_or(T::zero(), |b| b[oc]);
                    for ci in 0..cin_g {
                        for ky in 0..geom.kernel.0 {
                            for kx in 0..geom.kernel.1 {
                                let iy = (oy * geom.stride.0 + ky) as isize - geom.padding.0 as isize;
                                let ix = (ox * geom.stride.1 + kx) as isize - geom.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= is.h as isize || ix >= is.w as isize {
                                    continue;
                                }
                                acc += weight.at(oc, ci, ky, kx) * input.at(n, gi * cin_g + ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    let idx = ((n * os.c + oc) * os.h + oy) * os.w + ox;
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    Ok(out)
}

fn validate_depthwise(input: Shape, weight: Shape, geom: &ConvGeometry) -> Result<Shape> {
    expect_dim("depthwise_conv2d", "weight channels", input.c, weight.n)?;
    expect_dim("depthwise_conv2d", "weight in-channels", 1, weight.c)?;
    expect_dim("depthwise_conv2d", "groups", input.c, geom.groups)?;
    validate(input, weight, geom, "depthwise_conv2d")
}

/// For output columns `0..ow` and kernel column `kx`, the range of `ox` whose
/// input column lies inside `0..w`.
fn valid_cols(ow: usize, w: usize, stride: usize, kx: usize, pad: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    // ox·stride + kx − pad ≤ w − 1
    let hi = if w + pad < kx + 1 { 0 } else { ((w - 1 + pad - kx) / stride + 1).min(ow) };
    (lo.min(hi), hi)
}

/// Depthwise convolution: output channel `m` sees only input channel `m`.
/// `weight` is `C × 1 × kh × kw` and `geom.groups` must equal `C`.
pub fn depthwise_conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    let is = input.shape();
    let os = validate_depthwise(is, weight.shape(), geom)?;
    input.ensure_finite("depthwise_conv2d")?;
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let mut out = Tensor::zeros(os);
    let wdata = weight.data();
    let od = out.data_mut();
    for n in 0..is.n {
        for c in 0..is.c {
            let src = &input.data()[(n * is.c + c) * is.plane()..][..is.plane()];
            let dst = &mut od[(n * os.c + c) * os.plane()..][..os.plane()];
            let kern = &wdata[c * kh * kw..(c + 1) * kh * kw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = kern[ky * kw + kx];
                    let (lo, hi) = valid_cols(os.w, is.w, sw, kx, pw);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..os.h {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= is.h as isize {
                            continue;
                        }
                        let irow = &src[iy as usize * is.w..(iy as usize + 1) * is.w];
                        let orow = &mut dst[oy * os.w..(oy + 1) * os.w];
                        if sw == 1 {
                            let off = lo + kx - pw;
                            for (o, &i) in orow[lo..hi].iter_mut().zip(&irow[off..off + (hi - lo)]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in lo..hi {
                                orow[ox] += wv * irow[ox * sw + kx - pw];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`depthwise_conv2d`]: returns (grad input, grad weight).
pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    geom: &ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let is = input.shape();
    let os = validate_depthwise(is, weight.shape(), geom)?;
    if grad_out.shape() != os {
        return Err(Error::InvalidArgument(format!(
            "depthwise_conv2d_backward: gradient shape {} does not match output {os}",
            grad_out.shape()
        )));
    }
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let mut dx = Tensor::zeros(is);
    let mut dw = vec![T::zero(); weight.len()];
    let wdata = weight.data();
    for n in 0..is.n {
        for c in 0..is.c {
            let src = &input.data()[(n * is.c + c) * is.plane()..][..is.plane()];
            let dy = &grad_out.data()[(n * os.c + c) * os.plane()..][..os.plane()];
            let dxp = &mut dx.data_mut()[(n * is.c + c) * is.plane()..][..is.plane()];
            for ky in 0..kh {
                for kx in 0..kw {
                    let k = c * kh * kw + ky * kw + kx;
                    let wv = wdata[k];
                    let (lo, hi) = valid_cols(os.w, is.w, sw, kx, pw);
                    if lo >= hi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in 0..os.h {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= is.h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let grow = &dy[oy * os.w..(oy + 1) * os.w];
                        if sw == 1 {
                            let off = lo + kx - pw;
                            let len = hi - lo;
                            acc += gemm::dot(&grow[lo..hi], &src[iy * is.w + off..iy * is.w + off + len]);
                            for (d, &gv) in dxp[iy * is.w + off..iy * is.w + off + len].iter_mut().zip(&grow[lo..hi]) {
                                *d += wv * gv;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = ox * sw + kx - pw;
                                acc += grow[ox] * src[iy * is.w + ix];
                                dxp[iy * is.w + ix] += wv * grow[ox];
                            }
                        }
                    }
                    dw[k] += acc;
                }
            }
        }
    }
    Ok((dx, dw))
}
