use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Geometry of a 2-D convolution, validated against its operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new<F: Element>(
        input: &Tensor<F>,
        weight: &Tensor<F>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [n, ci, h, w] = input.dims4("conv2d")?;
        let [co, wci, kh, kw] = weight.dims4("conv2d")?;
        if stride == 0 {
            return Err(Error::Argument("conv2d stride must be positive".into()));
        }
        if wci != ci {
            return Err(Error::Axis { op: "conv2d", axis: 1, expected: wci, got: ci });
        }
        if h + 2 * pad < kh {
            return Err(Error::KernelTooLarge { op: "conv2d", axis: 2, kernel: kh, padded: h + 2 * pad });
        }
        if w + 2 * pad < kw {
            return Err(Error::KernelTooLarge { op: "conv2d", axis: 3, kernel: kw, padded: w + 2 * pad });
        }
        Ok(Self {
            batch: n,
            in_channels: ci,
            in_h: h,
            in_w: w,
            out_channels: co,
            kernel_h: kh,
            kernel_w: kw,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        })
    }

    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output positions `o` in `[lo, hi)` whose source `o * stride + k - pad` lies in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride).min(out_len) } else { 0 };
    let hi = (in_len + pad).saturating_sub(k).div_ceil(stride).min(out_len);
    (lo, hi.max(lo))
}

/// Zero-padded 2-D cross-correlation.
///
/// `input` is `[n, ci, h, w]`, `weight` is `[co, ci, kh, kw]` and `bias`,
/// when present, is `[co]`.
pub fn conv2d<F: Element>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let g = ConvGeometry::new(input, weight, stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.out_channels] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![g.out_channels],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let item_in = g.in_channels * g.in_plane();
    let item_out = g.out_channels * g.out_plane();
    let mut out = vec![F::zero(); g.batch * item_out];
    let x = input.data();
    let wt = weight.data();
    out.par_chunks_mut(item_out).enumerate().for_each(|(n, out_item)| {
        let x_item = &x[n * item_in..(n + 1) * item_in];
        for co in 0..g.out_channels {
            let plane = &mut out_item[co * g.out_plane()..(co + 1) * g.out_plane()];
            if let Some(b) = bias {
                plane.fill(b.data()[co]);
            }
            for ci in 0..g.in_channels {
                let x_plane = &x_item[ci * g.in_plane()..(ci + 1) * g.in_plane()];
                let w_base = (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
                for ky in 0..g.kernel_h {
                    let (oy_lo, oy_hi) = valid_range(g.out_h, g.in_h, ky, g.pad, g.stride);
                    for kx in 0..g.kernel_w {
                        let wv = wt[w_base + ky * g.kernel_w + kx];
                        let (ox_lo, ox_hi) = valid_range(g.out_w, g.in_w, kx, g.pad, g.stride);
                        if ox_lo == ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * g.stride + ky - g.pad;
                            let x_row = &x_plane[iy * g.in_w..(iy + 1) * g.in_w];
                            let o_row = &mut plane[oy * g.out_w..(oy + 1) * g.out_w];
                            if g.stride == 1 {
                                let shift = kx as isize - g.pad as isize;
                                let src = &x_row[(ox_lo as isize + shift) as usize..(ox_hi as isize + shift) as usize];
                                for (o, &v) in o_row[ox_lo..ox_hi].iter_mut().zip(src) {
                                    *o += wv * v;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    o_row[ox] += wv * x_row[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new([g.batch, g.out_channels, g.out_h, g.out_w], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub struct Conv2dGrads<F> {
    pub input: Option<Tensor<F>>,
    pub weight: Option<Tensor<F>>,
    pub bias: Option<Tensor<F>>,
}

/// Backward pass of [`conv2d`]. Only the requested gradients are computed.
pub fn conv2d_backward<F: Element>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
    stride: usize,
    pad: usize,
    want: [bool; 3],
) -> Result<Conv2dGrads<F>> {
    let g = ConvGeometry::new(input, weight, stride, pad)?;
    let expected = [g.batch, g.out_channels, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d backward",
            lhs: expected.to_vec(),
            rhs: grad_out.shape().to_vec(),
        });
    }
    let item_in = g.in_channels * g.in_plane();
    let item_out = g.out_channels * g.out_plane();
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();

    let grad_input = if want[0] {
        let mut gi = vec![F::zero(); g.batch * item_in];
        gi.par_chunks_mut(item_in).enumerate().for_each(|(n, gi_item)| {
            let go_item = &go[n * item_out..(n + 1) * item_out];
            for co in 0..g.out_channels {
                let go_plane = &go_item[co * g.out_plane()..(co + 1) * g.out_plane()];
                for ci in 0..g.in_channels {
                    let gi_plane = &mut gi_item[ci * g.in_plane()..(ci + 1) * g.in_plane()];
                    let w_base = (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
                    for ky in 0..g.kernel_h {
                        let (oy_lo, oy_hi) = valid_range(g.out_h, g.in_h, ky, g.pad, g.stride);
                        for kx in 0..g.kernel_w {
                            let wv = wt[w_base + ky * g.kernel_w + kx];
                            let (ox_lo, ox_hi) = valid_range(g.out_w, g.in_w, kx, g.pad, g.stride);
                            for oy in oy_lo..oy_hi {
                                let iy = oy * g.stride + ky - g.pad;
                                let g_row = &go_plane[oy * g.out_w..(oy + 1) * g.out_w];
                                let i_row = &mut gi_plane[iy * g.in_w..(iy + 1) * g.in_w];
                                for ox in ox_lo..ox_hi {
                                    i_row[ox * g.stride + kx - g.pad] += wv * g_row[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
        Some(Tensor::new(input.shape(), gi)?)
    } else {
        None
    };

    let grad_weight = if want[1] {
        let per_item: Vec<Vec<F>> = (0..g.batch)
            .into_par_iter()
            .map(|n| {
                let mut gw = vec![F::zero(); weight.len()];
                let x_item = &x[n * item_in..(n + 1) * item_in];
                let go_item = &go[n * item_out..(n + 1) * item_out];
                for co in 0..g.out_channels {
                    let go_plane = &go_item[co * g.out_plane()..(co + 1) * g.out_plane()];
                    for ci in 0..g.in_channels {
                        let x_plane = &x_item[ci * g.in_plane()..(ci + 1) * g.in_plane()];
                        let w_base = (co * g.in_channels + ci) * g.kernel_h * g.kernel_w;
                        for ky in 0..g.kernel_h {
                            let (oy_lo, oy_hi) = valid_range(g.out_h, g.in_h, ky, g.pad, g.stride);
                            for kx in 0..g.kernel_w {
                                let (ox_lo, ox_hi) = valid_range(g.out_w, g.in_w, kx, g.pad, g.stride);
                                let mut acc = F::zero();
                                for oy in oy_lo..oy_hi {
                                    let iy = oy * g.stride + ky - g.pad;
                                    let g_row = &go_plane[oy * g.out_w..(oy + 1) * g.out_w];
                                    let x_row = &x_plane[iy * g.in_w..(iy + 1) * g.in_w];
                                    for ox in ox_lo..ox_hi {
                                        acc += g_row[ox] * x_row[ox * g.stride + kx - g.pad];
                                    }
                                }
                                gw[w_base + ky * g.kernel_w + kx] = acc;
                            }
                        }
                    }
                }
                gw
            })
            .collect();
        Some(Tensor::new(weight.shape(), sum_in_order(per_item, weight.len()))?)
    } else {
        None
    };

    let grad_bias = if want[2] {
        let mut gb = vec![F::zero(); g.out_channels];
        for n in 0..g.batch {
            for (co, b) in gb.iter_mut().enumerate() {
                let start = n * item_out + co * g.out_plane();
                *b += go[start..start + g.out_plane()].iter().copied().sum::<F>();
            }
        }
        Some(Tensor::new([g.out_channels], gb)?)
    } else {
        None
    };

    Ok(Conv2dGrads { input: grad_input, weight: grad_weight, bias: grad_bias })
}

/// Sums per-item partial buffers in item order, independent of thread timing.
pub(crate) fn sum_in_order<F: Element>(parts: Vec<Vec<F>>, len: usize) -> Vec<F> {
    let mut total = vec![F::zero(); len];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_three_by_three_sums_to_nine() {
        let x = Tensor::<f64>::ones([1, 1, 3, 3]);
        let w = Tensor::<f64>::ones([1, 1, 3, 3]);
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let x = Tensor::<f32>::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::<f32>::full([1, 1, 1, 1], 2.0);
        let b = Tensor::<f32>::zeros([1]);
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.data(), [2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn output_extent_formula() {
        let x = Tensor::<f32>::zeros([2, 3, 7, 6]);
        let w = Tensor::<f32>::zeros([4, 3, 3, 2]);
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), [2, 4, (7 + 2 - 3) / 2 + 1, (6 + 2 - 2) / 2 + 1]);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros([1, 3, 3, 3]);
        match conv2d(&x, &w, None, 1, 0) {
            Err(Error::Axis { axis: 1, expected: 3, got: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kernel_larger_than_padded_input() {
        let x = Tensor::<f32>::zeros([1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros([1, 1, 5, 5]);
        assert!(matches!(conv2d(&x, &w, None, 1, 1), Err(Error::KernelTooLarge { axis: 2, .. })));
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for out_len in 1..6 {
            for in_len in 1..7 {
                for k in 0..7 {
                    for pad in 0..3 {
                        for stride in 1..4 {
                            let (lo, hi) = valid_range(out_len, in_len, k, pad, stride);
                            for o in 0..out_len {
                                let src = (o * stride + k) as isize - pad as isize;
                                let ok = src >= 0 && (src as usize) < in_len;
                                assert_eq!(ok, o >= lo && o < hi, "{out_len} {in_len} {k} {pad} {stride} {o}");
                            }
                            assert!(lo <= hi && hi <= out_len);
                        }
                    }
                }
            }
        }
    }
}
