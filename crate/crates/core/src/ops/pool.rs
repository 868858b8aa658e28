use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Mean of a slice, computed as `first + sum(x - first) / len`.
///
/// A constant slice yields its value bit-exactly.
#[inline]
pub(crate) fn shifted_mean<F: Element>(values: impl Iterator<Item = F> + Clone, len: usize) -> F {
    let mut it = values;
    let first = match it.clone().next() {
        Some(v) => v,
        None => return F::zero(),
    };
    let dev: F = it.by_ref().map(|v| v - first).sum();
    first + dev / F::from_usize(len)
}

/// Spatial mean of every `[h, w]` plane: `[n, c, h, w] -> [n, c, 1, 1]`.
pub fn global_avg_pool<F: Element>(input: &Tensor<F>) -> Result<Tensor<F>> {
    let [n, c, h, w] = input.dims4("global_avg_pool")?;
    let plane = h * w;
    let out = input
        .data()
        .chunks(plane)
        .map(|p| shifted_mean(p.iter().copied(), plane))
        .collect();
    Tensor::new([n, c, 1, 1], out)
}

pub fn global_avg_pool_backward<F: Element>(input_shape: &[usize], grad_out: &Tensor<F>) -> Tensor<F> {
    let plane = input_shape[2] * input_shape[3];
    let inv = F::one() / F::from_usize(plane);
    let mut data = Vec::with_capacity(grad_out.len() * plane);
    for &g in grad_out.data() {
        let v = g * inv;
        data.extend(std::iter::repeat(v).take(plane));
    }
    Tensor::new(input_shape.to_vec(), data).expect("shape derived from forward input")
}

/// Mean across channels at every spatial site: `[n, c, h, w] -> [n, 1, h, w]`.
pub fn channel_mean<F: Element>(input: &Tensor<F>) -> Result<Tensor<F>> {
    let [n, c, h, w] = input.dims4("channel_mean")?;
    let plane = h * w;
    let x = input.data();
    let mut out = Vec::with_capacity(n * plane);
    for item in 0..n {
        let base = item * c * plane;
        for p in 0..plane {
            out.push(shifted_mean((0..c).map(|k| x[base + k * plane + p]), c));
        }
    }
    Tensor::new([n, 1, h, w], out)
}

pub fn channel_mean_backward<F: Element>(input_shape: &[usize], grad_out: &Tensor<F>) -> Tensor<F> {
    let (n, c, plane) = (input_shape[0], input_shape[1], input_shape[2] * input_shape[3]);
    let inv = F::one() / F::from_usize(c);
    let g = grad_out.data();
    let mut data = Vec::with_capacity(n * c * plane);
    for item in 0..n {
        for _ in 0..c {
            data.extend(g[item * plane..(item + 1) * plane].iter().map(|&v| v * inv));
        }
    }
    Tensor::new(input_shape.to_vec(), data).expect("shape derived from forward input")
}

/// Result of [`max_pool`]: the pooled tensor plus the flat input index chosen by each output.
pub struct MaxPoolOutput<F> {
    pub output: Tensor<F>,
    pub argmax: Vec<usize>,
}

/// Max pooling with a square window; padded positions never win.
///
/// Ties resolve to the lowest flat input index.
pub fn max_pool<F: Element>(input: &Tensor<F>, kernel: usize, stride: usize, pad: usize) -> Result<MaxPoolOutput<F>> {
    let [n, c, h, w] = input.dims4("max_pool")?;
    if kernel == 0 || stride == 0 {
        return Err(Error::Argument("max_pool kernel and stride must be positive".into()));
    }
    if pad >= kernel {
        return Err(Error::Argument(format!("max_pool pad {pad} must be smaller than kernel {kernel}")));
    }
    if h + 2 * pad < kernel {
        return Err(Error::KernelTooLarge { op: "max_pool", axis: 2, kernel, padded: h + 2 * pad });
    }
    if w + 2 * pad < kernel {
        return Err(Error::KernelTooLarge { op: "max_pool", axis: 3, kernel, padded: w + 2 * pad });
    }
    let oh = (h + 2 * pad - kernel) / stride + 1;
    let ow = (w + 2 * pad - kernel) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = F::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(MaxPoolOutput { output: Tensor::new([n, c, oh, ow], out)?, argmax })
}

pub fn max_pool_backward<F: Element>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<F>) -> Tensor<F> {
    let mut gi = Tensor::zeros(input_shape.to_vec());
    let d = gi.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    gi
}

/// Elementwise maximum over consecutive groups of rows: `[n * groups, d] -> [n, d]`.
///
/// Row `i * groups + r` belongs to item `i`. Ties resolve to the lowest group member.
pub fn group_max<F: Element>(input: &Tensor<F>, groups: usize) -> Result<MaxPoolOutput<F>> {
    let [rows, d] = input.dims2("group_max")?;
    if groups == 0 || rows % groups != 0 {
        return Err(Error::Axis { op: "group_max", axis: 0, expected: groups, got: rows });
    }
    let n = rows / groups;
    let x = input.data();
    let mut out = Vec::with_capacity(n * d);
    let mut argmax = Vec::with_capacity(n * d);
    for item in 0..n {
        for j in 0..d {
            let mut best_idx = item * groups * d + j;
            for r in 1..groups {
                let idx = (item * groups + r) * d + j;
                if x[idx] > x[best_idx] {
                    best_idx = idx;
                }
            }
            out.push(x[best_idx]);
            argmax.push(best_idx);
        }
    }
    Ok(MaxPoolOutput { output: Tensor::new([n, d], out)?, argmax })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_examples() {
        let x = Tensor::<f64>::full([1, 1, 3, 3], 7.0);
        assert_eq!(global_avg_pool(&x).unwrap().item(), 7.0);
        let x = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().item(), 2.5);
    }

    #[test]
    fn gap_of_constant_is_exact_for_awkward_values() {
        for &v in &[0.1f32, 1.0 / 3.0, -7.77, 1e-30] {
            let x = Tensor::<f32>::full([2, 3, 5, 7], v);
            assert!(global_avg_pool(&x).unwrap().data().iter().all(|&m| m == v));
        }
    }

    #[test]
    fn channel_mean_examples() {
        let x = Tensor::<f64>::from_f64([1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(channel_mean(&x).unwrap().data(), [3.0, 4.0, 5.0, 6.0]);
        let single = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.5, -2.0, 3.0, 0.25]).unwrap();
        assert!(channel_mean(&single).unwrap().bit_eq(&single));
        let c = Tensor::<f64>::full([2, 5, 3, 3], 7.0);
        assert!(channel_mean(&c).unwrap().data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn max_pool_ties_go_to_lowest_index() {
        let x = Tensor::<f64>::full([1, 1, 2, 2], 1.0);
        let p = max_pool(&x, 2, 2, 0).unwrap();
        assert_eq!(p.argmax, vec![0]);
        let g = max_pool_backward(x.shape(), &p.argmax, &Tensor::scalar(1.0).reshape([1, 1, 1, 1]).unwrap());
        assert_eq!(g.data(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn padded_max_pool_keeps_extent() {
        let x = Tensor::<f64>::from_fn([1, 2, 3, 4], |i| -(i as f64));
        let p = max_pool(&x, 3, 1, 1).unwrap();
        assert_eq!(p.output.shape(), [1, 2, 3, 4]);
        // all values negative: zero padding would have won, -inf padding does not
        assert!(p.output.data().iter().all(|&v| v <= 0.0));
        assert_eq!(p.output.data()[0], 0.0);
        assert_eq!(p.output.data()[5], 0.0);
    }

    #[test]
    fn group_max_takes_elementwise_max() {
        let x = Tensor::<f64>::from_f64([4, 2], &[1.0, 5.0, 3.0, 2.0, 0.0, 0.0, -1.0, 0.0]).unwrap();
        let g = group_max(&x, 2).unwrap();
        assert_eq!(g.output.data(), [3.0, 5.0, 0.0, 0.0]);
        assert_eq!(g.argmax, vec![2, 1, 4, 5]);
    }
}
