use alloc::format;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn pool_shape(is: Shape, kernel: (usize, usize), stride: (usize, usize)) -> Result<Shape> {
    if is.h < kernel.0 || is.w < kernel.1 {
        return Err(Error::InvalidGeometry {
            op: "avg_pool2d",
            reason: format!("spatial extent {}x{} smaller than kernel {}x{}", is.h, is.w, kernel.0, kernel.1),
        });
    }
    if stride.0 == 0 || stride.1 == 0 || kernel.0 == 0 || kernel.1 == 0 {
        return Err(Error::InvalidGeometry {
            op: "avg_pool2d",
            reason: format!("kernel {kernel:?} and stride {stride:?} must be positive"),
        });
    }
    Ok(Shape::new(is.n, is.c, (is.h - kernel.0) / stride.0 + 1, (is.w - kernel.1) / stride.1 + 1))
}

/// Average pooling without padding; each output is the mean of its window.
pub fn avg_pool2d<T: Scalar>(input: &Tensor<T>, kernel: (usize, usize), stride: (usize, usize)) -> Result<Tensor<T>> {
    let is = input.shape();
    let os = pool_shape(is, kernel, stride)?;
    let inv = T::one() / T::from_usize(kernel.0 * kernel.1);
    let mut out = Tensor::zeros(os);
    let od = out.data_mut();
    for plane in 0..is.n * is.c {
        let src = &input.data()[plane * is.plane()..][..is.plane()];
        let dst = &mut od[plane * os.plane()..][..os.plane()];
        for oy in 0..os.h {
            for ox in 0..os.w {
                let mut acc = T::zero();
                for ky in 0..kernel.0 {
                    let row = (oy * stride.0 + ky) * is.w + ox * stride.1;
                    for kx in 0..kernel.1 {
                        acc += src[row + kx];
                    }
                }
                dst[oy * os.w + ox] = acc * inv;
            }
        }
    }
    Ok(out)
}

/// Spreads each output gradient uniformly over its window.
pub fn avg_pool2d_backward<T: Scalar>(input_shape: Shape, kernel: (usize, usize), stride: (usize, usize), grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let os = pool_shape(input_shape, kernel, stride)?;
    if grad_out.shape() != os {
        return Err(Error::invalid(format!("avg_pool2d_backward: gradient shape {} does not match {os}", grad_out.shape())));
    }
    let is = input_shape;
    let inv = T::one() / T::from_usize(kernel.0 * kernel.1);
    let mut dx = Tensor::zeros(is);
    let dd = dx.data_mut();
    for plane in 0..is.n * is.c {
        let g = &grad_out.data()[plane * os.plane()..][..os.plane()];
        let dst = &mut dd[plane * is.plane()..][..is.plane()];
        for oy in 0..os.h {
            for ox in 0..os.w {
                let v = g[oy * os.w + ox] * inv;
                for ky in 0..kernel.0 {
                    let row = (oy * stride.0 + ky) * is.w + ox * stride.1;
                    for kx in 0..kernel.1 {
                        dst[row + kx] += v;
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Per-channel spatial mean, `N × C × 1 × 1`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let is = input.shape();
    let inv = T::one() / T::from_usize(is.plane().max(1));
    let data = input
        .data()
        .chunks(is.plane().max(1))
        .take(is.n * is.c)
        .map(|p| crate::gemm::sum(p) * inv)
        .collect();
    Tensor::new(Shape::new(is.n, is.c, 1, 1), data).expect("volume matches")
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let inv = T::one() / T::from_usize(input_shape.plane().max(1));
    let plane = input_shape.plane();
    Tensor::from_fn(input_shape, |i| grad_out.data()[i / plane] * inv)
}
