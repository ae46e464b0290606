use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::gemm;
use crate::scalar::Scalar;
use crate::tensor::{expect_dim, Shape, Tensor};

/// Affine map of each sample (flattened to length D) by a `D × K` weight.
/// The result is `N × K` stored as `N × K × 1 × 1`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let n = input.shape().n;
    let d = input.shape().sample_len();
    let ws = weight.shape();
    expect_dim("linear", "input features", ws.n, d)?;
    let k = ws.sample_len();
    expect_dim("linear", "bias length", k, bias.len())?;
    input.ensure_finite("linear")?;
    let mut out = vec![T::zero(); n * k];
    for row in out.chunks_mut(k) {
        row.copy_from_slice(bias);
    }
    gemm::gemm_nn(n, k, d, input.data(), weight.data(), &mut out);
    Tensor::new(Shape::matrix(n, k), out)
}

/// Returns (grad input in the input's shape, grad weight, grad bias).
pub fn linear_backward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let n = input.shape().n;
    let d = input.shape().sample_len();
    let k = weight.shape().sample_len();
    expect_dim("linear_backward", "input features", weight.shape().n, d)?;
    expect_dim("linear_backward", "gradient rows", n, grad_out.shape().n)?;
    expect_dim("linear_backward", "gradient features", k, grad_out.shape().sample_len())?;
    let mut dx = vec![T::zero(); n * d];
    gemm::gemm_nt(n, d, k, grad_out.data(), weight.data(), &mut dx);
    let mut dw = vec![T::zero(); d * k];
    gemm::gemm_tn(d, k, n, input.data(), grad_out.data(), &mut dw);
    let mut db = vec![T::zero(); k];
    for row in grad_out.data().chunks(k) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((Tensor::new(input.shape(), dx)?, dw, db))
}
