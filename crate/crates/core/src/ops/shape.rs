use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Concatenates along axis 1. All other axes must agree.
pub fn concat_channels<F: Element>(inputs: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let first = inputs.first().ok_or(Error::Empty { op: "concat_channels" })?;
    if first.rank() < 2 {
        return Err(Error::Rank { op: "concat_channels", expected: 2, got: first.shape().to_vec() });
    }
    let n = first.shape()[0];
    let inner: usize = first.shape()[2..].iter().product();
    let mut channels = 0;
    for t in inputs {
        if t.rank() != first.rank() {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        for axis in (0..t.rank()).filter(|&a| a != 1) {
            if t.shape()[axis] != first.shape()[axis] {
                return Err(Error::Axis {
                    op: "concat_channels",
                    axis,
                    expected: first.shape()[axis],
                    got: t.shape()[axis],
                });
            }
        }
        channels += t.shape()[1];
    }
    let mut out = Vec::with_capacity(n * channels * inner);
    for item in 0..n {
        for t in inputs {
            let block = t.shape()[1] * inner;
            out.extend_from_slice(&t.data()[item * block..(item + 1) * block]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = channels;
    Tensor::new(shape, out)
}

/// Copies channels `[start, start + len)` of axis 1.
pub fn slice_channels<F: Element>(input: &Tensor<F>, start: usize, len: usize) -> Result<Tensor<F>> {
    if input.rank() < 2 {
        return Err(Error::Rank { op: "slice_channels", expected: 2, got: input.shape().to_vec() });
    }
    let c = input.shape()[1];
    if len == 0 || start + len > c {
        return Err(Error::Axis { op: "slice_channels", axis: 1, expected: c, got: start + len });
    }
    let n = input.shape()[0];
    let inner: usize = input.shape()[2..].iter().product();
    let mut out = Vec::with_capacity(n * len * inner);
    for item in 0..n {
        let base = (item * c + start) * inner;
        out.extend_from_slice(&input.data()[base..base + len * inner]);
    }
    let mut shape = input.shape().to_vec();
    shape[1] = len;
    Tensor::new(shape, out)
}
