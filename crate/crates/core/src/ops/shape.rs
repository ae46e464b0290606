use alloc::format;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Elementwise sum of two tensors of identical shape.
pub fn add_residual<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!("add_residual: shapes {} and {} differ", a.shape(), b.shape())));
    }
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    Ok(out)
}

/// `N × (C·H·W)`, preserving N-C-H-W value order.
pub fn flatten<T: Scalar>(input: Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    input.reshape(Shape::matrix(s.n, s.sample_len())).expect("same volume")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_and_flatten() {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 64, 4, 4), |i| i as f32);
        assert_eq!(add_residual(&x, &Tensor::zeros(x.shape())).unwrap(), x);
        let f = flatten(x.clone());
        assert_eq!(f.len(), 1024);
        assert_eq!(f.shape(), Shape::matrix(1, 1024));
        assert_eq!(f.reshape(x.shape()).unwrap(), x);
        assert!(add_residual(&x, &Tensor::zeros(Shape::new(1, 64, 4, 5))).is_err());
    }
}
