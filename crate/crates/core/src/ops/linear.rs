use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Affine map `y = x W^T + b` with `x: [n, d]`, `W: [k, d]`, `b: [k]`.
pub fn linear<F: Element>(input: &Tensor<F>, weight: &Tensor<F>, bias: Option<&Tensor<F>>) -> Result<Tensor<F>> {
    let [n, d] = input.dims2("linear")?;
    let [k, wd] = weight.dims2("linear")?;
    if wd != d {
        return Err(Error::Axis { op: "linear", axis: 1, expected: wd, got: d });
    }
    if let Some(b) = bias {
        if b.shape() != [k] {
            return Err(Error::ShapeMismatch { op: "linear bias", lhs: vec![k], rhs: b.shape().to_vec() });
        }
    }
    let (x, w) = (input.data(), weight.data());
    let mut out = Vec::with_capacity(n * k);
    for row in x.chunks(d) {
        for j in 0..k {
            let wrow = &w[j * d..(j + 1) * d];
            let mut acc = bias.map_or(F::zero(), |b| b.data()[j]);
            for (&a, &b) in row.iter().zip(wrow) {
                acc += a * b;
            }
            out.push(acc);
        }
    }
    Tensor::new([n, k], out)
}

pub struct LinearGrads<F> {
    pub input: Tensor<F>,
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

pub fn linear_backward<F: Element>(input: &Tensor<F>, weight: &Tensor<F>, grad_out: &Tensor<F>) -> LinearGrads<F> {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let k = weight.shape()[0];
    let (x, w, g) = (input.data(), weight.data(), grad_out.data());
    let mut gx = vec![F::zero(); n * d];
    let mut gw = vec![F::zero(); k * d];
    let mut gb = vec![F::zero(); k];
    for i in 0..n {
        let xrow = &x[i * d..(i + 1) * d];
        let gxrow = &mut gx[i * d..(i + 1) * d];
        for j in 0..k {
            let gv = g[i * k + j];
            gb[j] += gv;
            let wrow = &w[j * d..(j + 1) * d];
            let gwrow = &mut gw[j * d..(j + 1) * d];
            for t in 0..d {
                gxrow[t] += gv * wrow[t];
                gwrow[t] += gv * xrow[t];
            }
        }
    }
    LinearGrads {
        input: Tensor::new([n, d], gx).expect("input shape"),
        weight: Tensor::new([k, d], gw).expect("weight shape"),
        bias: Tensor::new([k], gb).expect("bias shape"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_input_through() {
        let x = Tensor::<f64>::from_fn([3, 4], |i| i as f64 * 0.5 - 2.0);
        let eye = Tensor::<f64>::from_fn([4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        let b = Tensor::<f64>::zeros([4]);
        assert!(linear(&x, &eye, Some(&b)).unwrap().bit_eq(&x));
    }

    #[test]
    fn dimension_mismatch() {
        let x = Tensor::<f64>::zeros([3, 4]);
        let w = Tensor::<f64>::zeros([2, 5]);
        assert!(matches!(linear(&x, &w, None), Err(Error::Axis { axis: 1, .. })));
    }
}
