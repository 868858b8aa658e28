use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub fn relu<F: Element>(input: &Tensor<F>) -> Tensor<F> {
    input.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient passes where the input is strictly positive; the subgradient at 0 is 0.
pub fn relu_backward<F: Element>(input: &Tensor<F>, grad_out: &Tensor<F>) -> Tensor<F> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::new(input.shape(), data).expect("same shape as input")
}

/// Hyperbolic tangent with the range kept open: saturated outputs are
/// pulled one ulp inside `(-1, 1)`.
pub fn tanh<F: Element>(input: &Tensor<F>) -> Tensor<F> {
    let limit = F::one() - F::epsilon();
    input.map(|v| v.tanh().min(limit).max(-limit))
}

/// Uses the saved forward output `y = tanh(x)`: `dx = g * (1 - y^2)`.
pub fn tanh_backward<F: Element>(output: &Tensor<F>, grad_out: &Tensor<F>) -> Tensor<F> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * (F::one() - y * y))
        .collect();
    Tensor::new(output.shape(), data).expect("same shape as output")
}

/// Shape produced by broadcasting `a` against `b`; ranks must agree.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() }),
        })
        .collect()
}

/// Row-major strides of `shape` with zero stride on axes that broadcast.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for axis in (0..shape.len()).rev() {
        strides[axis] = if shape[axis] == 1 && out[axis] != 1 { 0 } else { acc };
        acc *= shape[axis];
    }
    strides
}

/// Visits every output index in row-major order with the matching offsets into `a` and `b`.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let total: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for flat in 0..total {
        f(flat, oa, ob);
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            oa += sa[axis];
            ob += sb[axis];
            if idx[axis] < out[axis] {
                break;
            }
            oa -= sa[axis] * out[axis];
            ob -= sb[axis] * out[axis];
            idx[axis] = 0;
        }
    }
}

/// Elementwise product with size-1 axes expanded.
pub fn broadcast_mul<F: Element>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let out_shape = broadcast_shape("broadcast_mul", a.shape(), b.shape())?;
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        return Tensor::new(out_shape, data);
    }
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let total: usize = out_shape.iter().product();
    let mut out = vec![F::zero(); total];
    let (da, db) = (a.data(), b.data());
    for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| out[o] = da[ia] * db[ib]);
    Tensor::new(out_shape, out)
}

/// Gradients of [`broadcast_mul`], reduced back onto each operand's shape.
pub fn broadcast_mul_backward<F: Element>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>) {
    let out_shape = grad_out.shape();
    let sa = broadcast_strides(a.shape(), out_shape);
    let sb = broadcast_strides(b.shape(), out_shape);
    let mut ga = Tensor::zeros_like(a);
    let mut gb = Tensor::zeros_like(b);
    {
        let (da, db, g) = (a.data(), b.data(), grad_out.data());
        let ga_d = ga.data_mut();
        let gb_d = gb.data_mut();
        for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| {
            ga_d[ia] += g[o] * db[ib];
            gb_d[ib] += g[o] * da[ia];
        });
    }
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_sign_cases() {
        let x = Tensor::<f64>::from_f64([3], &[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), [0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::ones([3]));
        assert_eq!(g.data(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn tanh_never_reaches_one() {
        let x = Tensor::<f64>::from_f64([3], &[1e300, -50.0, 0.0]).unwrap();
        let y = tanh(&x);
        assert!(y.data()[0] < 1.0 && y.data()[0] > 0.999);
        assert!(y.data()[1] > -1.0);
        assert_eq!(y.data()[2], 0.0);
        let x32 = Tensor::<f32>::from_f64([1], &[20.0]).unwrap();
        assert!(tanh(&x32).data()[0] < 1.0);
    }

    #[test]
    fn spatial_map_scales_every_channel() {
        let x = Tensor::<f64>::from_fn([1, 2, 2, 2], |i| i as f64 + 1.0);
        let ones = Tensor::<f64>::ones([1, 1, 2, 2]);
        assert!(broadcast_mul(&x, &ones).unwrap().bit_eq(&x));
        let map = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.0, 0.0, 2.0, -1.0]).unwrap();
        let y = broadcast_mul(&x, &map).unwrap();
        assert_eq!(y.data(), [1.0, 0.0, 6.0, -4.0, 5.0, 0.0, 14.0, -8.0]);
    }

    #[test]
    fn outer_product_broadcast() {
        let s = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = Tensor::<f64>::from_f64([1, 2, 1, 1], &[10.0, 100.0]).unwrap();
        let h = broadcast_mul(&s, &c).unwrap();
        assert_eq!(h.shape(), [1, 2, 2, 2]);
        assert_eq!(h.data(), [10.0, 20.0, 30.0, 40.0, 100.0, 200.0, 300.0, 400.0]);
    }

    #[test]
    fn non_broadcastable_is_an_error() {
        let a = Tensor::<f64>::zeros([1, 2, 3, 3]);
        let b = Tensor::<f64>::zeros([1, 3, 3, 3]);
        assert!(matches!(broadcast_mul(&a, &b), Err(Error::ShapeMismatch { .. })));
        let c = Tensor::<f64>::zeros([2, 3, 3]);
        assert!(broadcast_mul(&a, &c).is_err());
    }

    #[test]
    fn broadcast_backward_reduces_expanded_axes() {
        let a = Tensor::<f64>::from_f64([1, 2, 1, 1], &[2.0, 3.0]).unwrap();
        let b = Tensor::<f64>::from_f64([1, 1, 1, 2], &[5.0, 7.0]).unwrap();
        let g = Tensor::<f64>::ones([1, 2, 1, 2]);
        let (ga, gb) = broadcast_mul_backward(&a, &b, &g);
        assert_eq!(ga.data(), [12.0, 12.0]);
        assert_eq!(gb.data(), [5.0, 5.0]);
    }
}
