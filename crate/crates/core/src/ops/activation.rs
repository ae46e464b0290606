use alloc::format;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `min(max(x, 0), 6)` elementwise.
pub fn relu6<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let six = T::from_f64(6.0);
    input.map(|v| v.max(T::zero()).min(six))
}

/// Passes the gradient where `0 < x < 6`; the subgradient at both kinks is 0.
pub fn relu6_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let six = T::from_f64(6.0);
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if !(x > T::zero() && x < six) {
            *gv = T::zero();
        }
    }
    g
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Gradient of the sigmoid given its forward output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (gv, &s) in g.data_mut().iter_mut().zip(output.data()) {
        *gv *= s * (T::one() - s);
    }
    g
}

/// Row-wise softmax over exactly two logits, max-subtracted.
pub fn softmax2<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.sample_len() != 2 {
        return Err(Error::invalid(format!("softmax2: expected 2 logits per row, got {}", s.sample_len())));
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(2) {
        let m = row[0].max(row[1]);
        let e0 = (row[0] - m).exp();
        let e1 = (row[1] - m).exp();
        let z = e0 + e1;
        row[0] = e0 / z;
        row[1] = e1 / z;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use alloc::vec;

    #[test]
    fn relu6_definition() {
        let x = Tensor::<f32>::vector(vec![-1.0, 3.0, 9.0]);
        assert_eq!(relu6(&x).data(), &[0.0, 3.0, 6.0]);
        let g = relu6_backward(&Tensor::vector(vec![0.0f32, 6.0, 3.0]), &Tensor::vector(vec![1.0, 1.0, 1.0]));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_midpoint_and_extremes() {
        let s = sigmoid(&Tensor::<f64>::vector(vec![0.0, 800.0, -800.0]));
        assert_eq!(s.data()[0], 0.5);
        assert_eq!(s.data()[1], 1.0);
        assert!(s.data()[2] >= 0.0 && s.data()[2].is_finite());
    }

    #[test]
    fn softmax2_cases() {
        let p = softmax2(&Tensor::<f32>::new(Shape::matrix(2, 2), vec![0.0, 0.0, 1000.0, 0.0]).unwrap()).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5, 1.0, 0.0]);
        assert!(softmax2(&Tensor::<f32>::zeros(Shape::matrix(1, 3))).is_err());
    }
}
