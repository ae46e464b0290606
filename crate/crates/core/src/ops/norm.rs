//! Batch normalisation over the N, H and W axes of each channel.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{expect_dim, Tensor};

/// Running-stat momentum and epsilon used by every batch norm layer.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise by batch statistics.
    Train,
    /// Normalise by running statistics.
    Infer,
}

/// Saved by a training-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
    /// Elements per channel (N·H·W).
    pub count: usize,
}

fn check<T: Scalar>(input: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<()> {
    let c = input.shape().c;
    expect_dim("batch_norm", "scale length", c, gamma.len())?;
    expect_dim("batch_norm", "shift length", c, beta.len())?;
    Ok(())
}

/// Training-mode batch norm. Running statistics are not touched here; see
/// [`update_running_stats`].
pub fn batch_norm<T: Scalar>(input: &Tensor<T>, gamma: &[T], beta: &[T], eps: T) -> Result<(Tensor<T>, BnCache<T>)> {
    check(input, gamma, beta)?;
    let s = input.shape();
    let plane = s.plane();
    let count = s.n * plane;
    let inv_count = T::one() / T::from_usize(count.max(1));
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            mean[c] += crate::gemm::sum(&input.data()[(n * s.c + c) * plane..][..plane]);
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_count);
    for n in 0..s.n {
        for c in 0..s.c {
            let m = mean[c];
            var[c] += input.data()[(n * s.c + c) * plane..][..plane].iter().map(|&x| (x - m) * (x - m)).sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v *= inv_count);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut x_hat = vec![T::zero(); s.volume()];
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let (m, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            let src = &input.data()[base..base + plane];
            let xh = &mut x_hat[base..base + plane];
            let dst = &mut out.data_mut()[base..base + plane];
            for i in 0..plane {
                let v = (src[i] - m) * is;
                xh[i] = v;
                dst[i] = g * v + b;
            }
        }
    }
    Ok((
        out,
        BnCache {
            x_hat,
            inv_std,
            mean,
            var,
            count,
        },
    ))
}

/// `running ← (1 − momentum)·running + momentum·batch`, with the unbiased
/// batch variance folded into the running variance.
pub fn update_running_stats<T: Scalar>(cache: &BnCache<T>, running_mean: &mut [T], running_var: &mut [T], momentum: T) {
    let m = cache.count;
    let unbias = if m > 1 { T::from_usize(m) / T::from_usize(m - 1) } else { T::one() };
    for c in 0..running_mean.len() {
        running_mean[c] = (T::one() - momentum) * running_mean[c] + momentum * cache.mean[c];
        running_var[c] = (T::one() - momentum) * running_var[c] + momentum * cache.var[c] * unbias;
    }
}

/// Inference-mode batch norm using running statistics.
pub fn batch_norm_infer<T: Scalar>(input: &Tensor<T>, gamma: &[T], beta: &[T], mean: &[T], var: &[T], eps: T) -> Result<Tensor<T>> {
    check(input, gamma, beta)?;
    let s = input.shape();
    expect_dim("batch_norm", "running mean length", s.c, mean.len())?;
    expect_dim("batch_norm", "running variance length", s.c, var.len())?;
    let plane = s.plane();
    let scale: Vec<T> = (0..s.c).map(|c| gamma[c] / (var[c] + eps).sqrt()).collect();
    let shift: Vec<T> = (0..s.c).map(|c| beta[c] - mean[c] * scale[c]).collect();
    let mut out = input.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane.max(1)).enumerate() {
        let c = i % s.c;
        let (a, b) = (scale[c], shift[c]);
        chunk.iter_mut().for_each(|v| *v = a * *v + b);
    }
    Ok(out)
}

/// Returns (grad input, grad scale, grad shift) for a training-mode forward.
pub fn batch_norm_backward<T: Scalar>(cache: &BnCache<T>, gamma: &[T], grad_out: &Tensor<T>) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let s = grad_out.shape();
    let plane = s.plane();
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let g = &grad_out.data()[base..base + plane];
            dbeta[c] += crate::gemm::sum(g);
            dgamma[c] += crate::gemm::dot(g, &cache.x_hat[base..base + plane]);
        }
    }
    let m = T::from_usize(cache.count.max(1));
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let k = gamma[c] * cache.inv_std[c] / m;
            let (sg, sgx) = (dbeta[c], dgamma[c]);
            let g = &grad_out.data()[base..base + plane];
            let xh = &cache.x_hat[base..base + plane];
            let dst = &mut dx.data_mut()[base..base + plane];
            for i in 0..plane {
                dst[i] = k * (m * g[i] - sg - xh[i] * sgx);
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn train_mode_moments() {
        let x = Tensor::<f64>::from_fn(Shape::new(4, 3, 5, 5), |i| ((i * 7919) % 101) as f64 * 0.3 - 4.0);
        let gamma = [1.5, 0.5, 2.0];
        let beta = [0.1, -1.0, 3.0];
        let (y, _) = batch_norm(&x, &gamma, &beta, 1e-5).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|n| (0..25).map(move |i| (n, i))).map(|(n, i)| y.data()[(n * 3 + c) * 25 + i]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!((mean - beta[c]).abs() < 1e-5);
            assert!((var - gamma[c] * gamma[c]).abs() < 1e-5 * gamma[c] * gamma[c] + 1e-5);
        }
    }

    #[test]
    fn infer_identity_stats() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 2, 3, 3), |i| i as f64 - 10.0);
        let y = batch_norm_infer(&x, &[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 1e-5).unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!(y.max_abs_diff(&x.map(|v| v * scale)) < 1e-12);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 2, 2));
        assert!(batch_norm(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-5).is_err());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::<f64>::new(Shape::new(2, 1, 1, 1), alloc::vec![1.0, 3.0]).unwrap();
        let (_, cache) = batch_norm(&x, &[1.0], &[0.0], 1e-5).unwrap();
        let (mut m, mut v) = ([0.0], [1.0]);
        update_running_stats(&cache, &mut m, &mut v, 0.1);
        assert!((m[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance is 2
        assert!((v[0] - (0.9 + 0.2)).abs() < 1e-12);
    }
}
